"""Benchmark harness: dataset ingestion, experiment runs, verification.

Runs the decoder over a dataset, aggregates accuracy and token costs into
a report, and hosts the verification routine that checks the sampling
path against the exact enumeration oracles on a scripted space.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .aggregate import (
    AnswerSet,
    canonicalize_answer,
    extract_answers,
    majority_vote,
    single_chain_answer,
)
from .backends.base import EvaluationBackend, GenerationBackend, derive_rng, stable_seed
from .backends.scripted import (
    ScriptedEvaluationBackend,
    ScriptedGenerationBackend,
    ScriptedSpace,
)
from .core import CostLedger, DecodeConfig, Hypothesis, Question, TaskKind
from .engine import (
    CandidateSet,
    DecodeResult,
    beam_log_weights,
    enumerate_chains,
    exact_beam_distribution,
    exact_prune_distribution,
    restriction_error_bound,
    restriction_gap,
    prune_indices,
    run_decode,
)
from .exceptions import ContractViolation, EmptyDatasetError
from .executor import ProgramExecutor
from .prompts import PromptProvider, RawChainPrompts

__all__ = [
    "DatasetLoad",
    "InstanceRecord",
    "RunReport",
    "load_dataset",
    "run_benchmark",
    "scripted_setup",
    "load_spaces",
    "VerificationReport",
    "verify_sampling",
    "sweep",
    "write_trace",
]

logger = logging.getLogger(__name__)

InstanceSetup = Callable[[Question], tuple[GenerationBackend, EvaluationBackend, PromptProvider]]


@dataclass(frozen=True, slots=True)
class DatasetLoad:
    questions: tuple[Question, ...]
    rejects: tuple[dict, ...]


def load_dataset(path: str | Path) -> DatasetLoad:
    """Read a JSONL dataset; malformed lines land in the rejects report."""
    questions: list[Question] = []
    rejects: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
                question = Question(
                    id=str(payload["id"]),
                    text=str(payload["question"]),
                    gold_answer=str(payload["answer"]) if payload.get("answer") is not None else None,
                    task_kind=TaskKind(payload.get("task_kind", TaskKind.FREE_TEXT.value)),
                )
            except (json.JSONDecodeError, KeyError, ValueError, ContractViolation) as exc:
                rejects.append({"line": lineno, "error": str(exc), "content": line.rstrip("\n")})
                continue
            questions.append(question)
    if not questions:
        raise EmptyDatasetError(f"{path}: no valid instances")
    ids = [q.id for q in questions]
    if len(set(ids)) != len(ids):
        raise ContractViolation(f"{path}: duplicate question ids")
    return DatasetLoad(questions=tuple(questions), rejects=tuple(rejects))


@dataclass(frozen=True, slots=True)
class InstanceRecord:
    question_id: str
    predicted: str | None
    single_chain: str | None
    gold: str | None
    correct: bool
    single_chain_correct: bool
    cost: CostLedger
    trace_path: str | None = None
    error: str | None = None

    def as_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "predicted": self.predicted,
            "single_chain": self.single_chain,
            "gold": self.gold,
            "correct": self.correct,
            "single_chain_correct": self.single_chain_correct,
            "cost": self.cost.as_dict(),
            "trace_path": self.trace_path,
            "error": self.error,
        }


@dataclass(frozen=True, slots=True)
class RunReport:
    records: tuple[InstanceRecord, ...]
    config: DecodeConfig

    @property
    def accuracy(self) -> float:
        return sum(r.correct for r in self.records) / len(self.records)

    @property
    def single_chain_accuracy(self) -> float:
        return sum(r.single_chain_correct for r in self.records) / len(self.records)

    @property
    def total_tokens(self) -> int:
        return sum(r.cost.total_cost for r in self.records)

    @property
    def failures(self) -> int:
        return sum(r.error is not None for r in self.records)

    def as_dict(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "aggregate": {
                "instances": len(self.records),
                "accuracy": self.accuracy,
                "single_chain_accuracy": self.single_chain_accuracy,
                "total_tokens": self.total_tokens,
                "failures": self.failures,
            },
            "records": [r.as_dict() for r in self.records],
        }


def write_trace(result: DecodeResult, path: str | Path) -> None:
    """One JSON record per timestep, byte-stable for a fixed seed."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in result.trace:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _instance_config(config: DecodeConfig, question: Question) -> DecodeConfig:
    # every instance gets its own seed substream so dataset order is irrelevant
    return replace(config, seed=stable_seed(config.seed, "instance", question.id))


def _run_instance(
    question: Question,
    config: DecodeConfig,
    setup: InstanceSetup,
    executor: ProgramExecutor | None,
    trace_dir: Path | None,
) -> InstanceRecord:
    gold = canonicalize_answer(question.gold_answer) if question.gold_answer is not None else None
    try:
        generator, evaluator, prompts = setup(question)
        result = run_decode(question, _instance_config(config, question), generator, evaluator, prompts)
        pairs: list[tuple[Hypothesis, AnswerSet]] = [
            (h, extract_answers(h, question.task_kind, executor)) for h in result.final_beam
        ]
        vote = majority_vote(pairs)
        single = single_chain_answer(pairs)
        trace_path = None
        if trace_dir is not None:
            trace_path = str(trace_dir / f"{question.id}.trace.jsonl")
            write_trace(result, trace_path)
        return InstanceRecord(
            question_id=question.id,
            predicted=vote.winner,
            single_chain=single,
            gold=gold,
            correct=gold is not None and vote.winner == gold,
            single_chain_correct=gold is not None and single == gold,
            cost=result.ledger,
            trace_path=trace_path,
        )
    except Exception as exc:
        logger.warning("instance %s failed: %s", question.id, exc)
        return InstanceRecord(
            question_id=question.id,
            predicted=None,
            single_chain=None,
            gold=gold,
            correct=False,
            single_chain_correct=False,
            cost=CostLedger(),
            error=str(exc),
        )


def run_benchmark(
    questions: Sequence[Question],
    config: DecodeConfig,
    setup: InstanceSetup,
    executor: ProgramExecutor | None = None,
    trace_dir: str | Path | None = None,
    workers: int = 1,
) -> RunReport:
    """Decode and score every instance; per-instance failures are recorded
    and the run continues, but a majority of failures aborts it."""
    if not questions:
        raise EmptyDatasetError("run_benchmark requires at least one question")
    trace_path = Path(trace_dir) if trace_dir is not None else None
    if trace_path is not None:
        trace_path.mkdir(parents=True, exist_ok=True)
    if workers <= 1:
        records = [_run_instance(q, config, setup, executor, trace_path) for q in questions]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(
                pool.map(lambda q: _run_instance(q, config, setup, executor, trace_path), questions)
            )
    report = RunReport(records=tuple(records), config=config)
    if report.failures * 2 > len(records):
        raise RuntimeError(
            f"{report.failures}/{len(records)} instances failed; "
            f"first error: {next(r.error for r in records if r.error is not None)}"
        )
    return report


def load_spaces(path: str | Path) -> ScriptedSpace | dict[str, ScriptedSpace]:
    """A scripted-space file: either one space or a per-question mapping."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if "nodes" in payload:
        return ScriptedSpace.from_dict(payload)
    if "spaces" in payload:
        return {qid: ScriptedSpace.from_dict(doc) for qid, doc in payload["spaces"].items()}
    raise ContractViolation(f"{path}: expected a space document or a 'spaces' mapping")


def scripted_setup(
    spaces: ScriptedSpace | Mapping[str, ScriptedSpace],
    config: DecodeConfig,
) -> InstanceSetup:
    """Instance setup backed by scripted spaces (one shared or per-id)."""

    def setup(question: Question):
        space = spaces[question.id] if isinstance(spaces, Mapping) else spaces
        seed = stable_seed(config.seed, "backend", question.id)
        return (
            ScriptedGenerationBackend(space, seed=seed),
            ScriptedEvaluationBackend(space),
            RawChainPrompts(task_kind=question.task_kind),
        )

    return setup


# -- verification against the enumeration oracles --------------------------


@dataclass(frozen=True, slots=True)
class VerificationCheck:
    name: str
    passed: bool
    observed: float
    threshold: float
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "observed": self.observed,
            "threshold": self.threshold,
            "detail": self.detail,
        }


@dataclass(frozen=True, slots=True)
class VerificationReport:
    checks: tuple[VerificationCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.as_dict() for c in self.checks]}


def _chain_hypotheses(space: ScriptedSpace, config: DecodeConfig) -> list[Hypothesis]:
    """Full chains as bare hypotheses carrying only their scores, for
    driving the pruning path the same way the engine would."""
    chains = enumerate_chains(space, config.lam, config.gen_temp, config.step_prob_mode)
    out = []
    for chain in chains:
        score = chain.score_at()
        out.append(Hypothesis(log_score=float(np.log(score)) if score > 0 else -np.inf))
    return out


def verify_sampling(
    space: ScriptedSpace | str | Path,
    config: DecodeConfig,
    trials: int = 100_000,
    subset_draws: int = 200,
) -> VerificationReport:
    """Check the sampling path against exact enumeration.

    Three families of checks: empirical prune frequencies against the
    sequential-without-replacement distribution (subset total variation
    and per-member marginals), the softmax-restriction gap against its
    worst-case bound for several subset sizes, and the zero-temperature
    equivalence with deterministic top-k.
    """
    if isinstance(space, (str, Path)):
        space = ScriptedSpace.from_file(space)
    config = config.resolved_for(TaskKind.FREE_TEXT)
    tau = config.sample_temp
    if tau is None or tau <= 0.0:
        raise ContractViolation("verification requires a resolved sample_temp > 0")

    hypotheses = _chain_hypotheses(space, config)
    n = len(hypotheses)
    k = min(config.beam_size, n)
    candidate_set = CandidateSet(
        candidates=tuple(hypotheses), origins=tuple((0, i) for i in range(n))
    )
    checks: list[VerificationCheck] = []

    # empirical prune frequencies vs. exact enumeration over orderings
    exact = exact_prune_distribution(beam_log_weights(hypotheses, tau, config.beam_score_domain), k)
    counts: dict[frozenset[int], int] = {}
    marginal_counts = np.zeros(n)
    for trial in range(trials):
        rng = derive_rng(config.seed, "verify", trial)
        chosen = prune_indices(candidate_set, k, tau, rng, config.beam_score_domain)
        key = frozenset(chosen)
        counts[key] = counts.get(key, 0) + 1
        for idx in chosen:
            marginal_counts[idx] += 1
    all_subsets = set(exact) | set(counts)
    tv = 0.5 * sum(abs(counts.get(s, 0) / trials - exact.get(s, 0.0)) for s in all_subsets)
    checks.append(
        VerificationCheck(
            name="prune_subset_total_variation",
            passed=tv <= 0.02,
            observed=tv,
            threshold=0.02,
            detail=f"{n} candidates, k={k}, {trials} trials",
        )
    )
    exact_marginals = np.zeros(n)
    for subset, prob in exact.items():
        for idx in subset:
            exact_marginals[idx] += prob
    marginal_dev = float(np.max(np.abs(marginal_counts / trials - exact_marginals)))
    checks.append(
        VerificationCheck(
            name="prune_marginal_deviation",
            passed=marginal_dev < 0.01,
            observed=marginal_dev,
            threshold=0.01,
        )
    )

    # softmax restriction gap vs. its worst-case bound
    full = exact_beam_distribution(space, config)
    members = list(full)
    full_scores = {
        chain.steps: chain.score_at()
        for chain in enumerate_chains(space, config.lam, config.gen_temp, config.step_prob_mode)
    }
    subset_sizes = sorted({1, 2, max(1, len(members) // 2), len(members) - 1, len(members)} & set(range(1, len(members) + 1)))
    rng = derive_rng(config.seed, "verify-subsets")
    for m in subset_sizes:
        bound = restriction_error_bound(space, m, tau, config)
        worst = 0.0
        draws = 1 if m == len(members) else subset_draws
        for _ in range(draws):
            picked = rng.choice(len(members), size=m, replace=False)
            subset = [members[i] for i in picked]
            worst = max(worst, restriction_gap(full_scores, subset, tau))
        checks.append(
            VerificationCheck(
                name=f"restriction_gap_bound_M{m}",
                passed=worst <= bound + 1e-12,
                observed=worst,
                threshold=bound,
                detail=f"{draws} subsets of size {m}",
            )
        )

    # zero temperature degenerates to deterministic top-k
    mismatches = 0
    for trial in range(1000):
        rng_t = derive_rng(config.seed, "verify-tau0", trial)
        scores = rng_t.random(n)
        fake = CandidateSet(
            candidates=tuple(Hypothesis(log_score=float(np.log(s))) for s in scores),
            origins=tuple((0, i) for i in range(n)),
        )
        got = prune_indices(fake, k, 0.0, rng_t)
        want = sorted(range(n), key=lambda i: (-scores[i], i))[:k]
        if got != want:
            mismatches += 1
    checks.append(
        VerificationCheck(
            name="tau_zero_topk_equivalence",
            passed=mismatches == 0,
            observed=float(mismatches),
            threshold=0.0,
            detail="1000 random score vectors",
        )
    )
    return VerificationReport(checks=tuple(checks))


def sweep(
    questions: Sequence[Question],
    base_config: DecodeConfig,
    vary: Mapping[str, Sequence],
    setup_factory: Callable[[DecodeConfig], InstanceSetup],
    executor: ProgramExecutor | None = None,
    workers: int = 1,
) -> list[dict]:
    """Run the benchmark over a config grid; one result row per combo."""
    rows = []
    names = list(vary)
    for values in itertools.product(*(vary[name] for name in names)):
        config = replace(base_config, **dict(zip(names, values)))
        report = run_benchmark(questions, config, setup_factory(config), executor, workers=workers)
        row = {name: value for name, value in zip(names, values)}
        row.update(
            accuracy=report.accuracy,
            single_chain_accuracy=report.single_chain_accuracy,
            total_tokens=report.total_tokens,
            failures=report.failures,
        )
        rows.append(row)
    return rows


def write_sweep_csv(rows: Iterable[dict], path: str | Path) -> None:
    rows = list(rows)
    if not rows:
        raise ContractViolation("no sweep rows to write")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
