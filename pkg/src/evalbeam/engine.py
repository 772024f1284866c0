"""The stochastic beam search loop and its exact-enumeration counterparts.

Each timestep expands every active beam with ``n`` sampled continuations,
scores them, and prunes back to ``k`` survivors by sampling without
replacement from a softmax over the accumulated chain scores at the
current temperature.  The temperature decays multiplicatively per step,
so the search anneals from exploration toward plain beam search.

The module also carries the brute-force side of the verification pair:
exact enumeration of a scripted space's chain distribution, the exact
without-replacement pruning distribution, and the approximation-error
bound for softmax normalization restricted to a sampled candidate subset.
These are the oracles the sampling path is tested against; neither side
may be replaced by the other.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .backends.base import EvaluationBackend, GenerationBackend, derive_rng
from .backends.scripted import ScriptedSpace, reshape_probs
from .core import (
    BeamScoreDomain,
    CostLedger,
    DecodeConfig,
    Hypothesis,
    Question,
    StepProbMode,
    extend_hypothesis,
)
from .exceptions import (
    BackendError,
    ContractViolation,
    DecodeAborted,
    EnumerationLimitError,
    ExpandError,
)
from .prompts import PromptProvider
from .scoring import ScoringPolicy, make_step_score

__all__ = [
    "BeamState",
    "CandidateSet",
    "DecodeResult",
    "LedgerAccumulator",
    "expand",
    "prune",
    "prune_indices",
    "decay_temperature",
    "run_decode",
    "enumerate_chains",
    "exact_beam_distribution",
    "exact_prune_distribution",
    "restriction_error_bound",
    "restriction_gap",
]

ENUMERATION_LIMIT = 10_000
FROZEN_ROLLOUT = -1


@dataclass(frozen=True, slots=True)
class BeamState:
    """The ``k`` (or fewer) hypotheses alive at one timestep."""

    hypotheses: tuple[Hypothesis, ...]
    step_index: int = 0
    current_tau: float = 0.0
    rng_state: int = 0

    def __post_init__(self) -> None:
        if not self.hypotheses:
            raise ContractViolation("a beam must hold at least one hypothesis")
        if self.current_tau < 0.0:
            raise ContractViolation("current_tau must be >= 0")


@dataclass(frozen=True, slots=True)
class CandidateSet:
    """Expansion output: candidates plus their (parent, rollout) origins.

    ``origins[i]`` is the beam slot the candidate came from and the sample
    index within that slot; frozen pass-through candidates carry rollout
    ``FROZEN_ROLLOUT``.
    """

    candidates: tuple[Hypothesis, ...]
    origins: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if len(self.candidates) != len(self.origins):
            raise ContractViolation("candidates and origins must have equal length")

    def __len__(self) -> int:
        return len(self.candidates)


class LedgerAccumulator:
    """The single aggregation point for cost deltas in one run."""

    def __init__(self) -> None:
        self.total = CostLedger()

    def add(self, delta: CostLedger) -> None:
        self.total = self.total + delta


@dataclass(frozen=True, slots=True)
class DecodeResult:
    """Final beam plus the full per-timestep trace and the run ledger."""

    final_beam: tuple[Hypothesis, ...]
    trace: tuple[dict, ...]
    ledger: CostLedger
    config: DecodeConfig


def expand(
    beam: BeamState,
    generator: GenerationBackend,
    evaluator: EvaluationBackend,
    prompts: PromptProvider,
    config: DecodeConfig,
    question: Question,
    ledger: LedgerAccumulator | None = None,
) -> CandidateSet:
    """Grow every active hypothesis by ``n`` scored continuations.

    Completed hypotheses pass through frozen as a single candidate each,
    staying in pruning competition.  Every generation and evaluation
    token flows into ``ledger``; each child hypothesis additionally
    records the tokens attributable to its own chain (the shared
    generation API call is only counted at run level).
    """
    if config.gen_temp is None:
        raise ContractViolation("config.gen_temp must be resolved before expansion")
    policy = ScoringPolicy(lam=config.lam, step_prob_mode=config.step_prob_mode)
    stop_rules = prompts.stop_rules()
    candidates: list[Hypothesis] = []
    origins: list[tuple[int, int]] = []
    for parent_idx, hypothesis in enumerate(beam.hypotheses):
        if not hypothesis.is_active:
            candidates.append(hypothesis)
            origins.append((parent_idx, FROZEN_ROLLOUT))
            continue
        prefix_steps = hypothesis.step_texts()
        context = prompts.generation_context(question, prefix_steps)
        try:
            steps, gen_delta = generator.sample_steps(
                context, config.rollouts_per_beam, config.gen_temp, stop_rules
            )
        except BackendError as exc:
            raise ExpandError("generation failed", parent=parent_idx, rollout=FROZEN_ROLLOUT, cause=exc) from exc
        if ledger is not None:
            ledger.add(gen_delta)
        for rollout_idx, step in enumerate(steps):
            eval_context = prompts.evaluation_context(question, prefix_steps + (step.text,))
            try:
                correctness, eval_delta = evaluator.correctness(eval_context)
            except BackendError as exc:
                raise ExpandError(
                    "evaluation failed", parent=parent_idx, rollout=rollout_idx, cause=exc
                ) from exc
            if ledger is not None:
                ledger.add(eval_delta)
            score = make_step_score(step.token_logprobs, correctness, policy)
            child_cost = CostLedger(generated_tokens=len(step.token_logprobs)) + eval_delta
            child = extend_hypothesis(
                hypothesis, step, score, max_steps=config.max_steps, cost_delta=child_cost
            )
            candidates.append(child)
            origins.append((parent_idx, rollout_idx))
    return CandidateSet(candidates=tuple(candidates), origins=tuple(origins))


def dedup_candidates(candidate_set: CandidateSet) -> CandidateSet:
    """Merge exact-duplicate chains, keeping the lowest-index occurrence.

    Exact duplicates agree on both step texts and accumulated score;
    same-text chains whose token likelihoods differ are kept apart.
    """
    seen: set[tuple[tuple[str, ...], float]] = set()
    keep_candidates = []
    keep_origins = []
    for candidate, origin in zip(candidate_set.candidates, candidate_set.origins):
        key = (candidate.key(), candidate.log_score)
        if key in seen:
            continue
        seen.add(key)
        keep_candidates.append(candidate)
        keep_origins.append(origin)
    return CandidateSet(candidates=tuple(keep_candidates), origins=tuple(keep_origins))


def _pruning_keys(
    candidates: Sequence[Hypothesis], tau: float, domain: BeamScoreDomain
) -> list[float]:
    """Log-weights of the pruning distribution (up to a shared constant)."""
    if domain == BeamScoreDomain.LITERAL_EXP:
        return [h.chain_score / tau for h in candidates]
    return [h.log_score / tau if h.log_score > -math.inf else -math.inf for h in candidates]


def prune_indices(
    candidate_set: CandidateSet,
    k: int,
    tau: float,
    rng: np.random.Generator,
    domain: BeamScoreDomain = BeamScoreDomain.LITERAL_EXP,
) -> list[int]:
    """Indices of the ``k`` survivors.

    ``tau > 0`` samples without replacement from the softmax over chain
    scores via Gumbel-top-k on the log-weights, which realizes exactly
    the sequential renormalized draw.  ``tau = 0`` is deterministic
    top-k by score with a stable lowest-index tie-break.
    """
    n = len(candidate_set)
    if n == 0:
        raise ContractViolation("cannot prune an empty candidate set")
    if tau < 0.0:
        raise ContractViolation("tau must be >= 0")
    k_eff = min(k, n)
    if tau == 0.0:
        scores = [h.chain_score for h in candidate_set.candidates]
        order = sorted(range(n), key=lambda i: (-scores[i], i))
        return order[:k_eff]
    keys = _pruning_keys(candidate_set.candidates, tau, domain)
    noise = rng.gumbel(loc=0.0, scale=1.0, size=n)
    perturbed = [key + float(g) if key > -math.inf else -math.inf for key, g in zip(keys, noise)]
    order = sorted(range(n), key=lambda i: (-perturbed[i], i))
    return order[:k_eff]


def prune(
    candidate_set: CandidateSet,
    k: int,
    tau: float,
    rng: np.random.Generator,
    domain: BeamScoreDomain = BeamScoreDomain.LITERAL_EXP,
) -> list[Hypothesis]:
    """The surviving hypotheses (see :func:`prune_indices`)."""
    return [candidate_set.candidates[i] for i in prune_indices(candidate_set, k, tau, rng, domain)]


def decay_temperature(tau: float, alpha: float) -> float:
    """One multiplicative decay step of the sampling temperature."""
    if tau < 0.0:
        raise ContractViolation("tau must be >= 0")
    if not (0.0 <= alpha <= 1.0):
        raise ContractViolation("alpha must be in [0, 1]")
    return alpha * tau


def _trace_record(
    t: int, tau: float, candidate_set: CandidateSet, selected: Sequence[int]
) -> dict:
    return {
        "t": t,
        "tau": tau,
        "candidates": [
            {
                "steps": list(h.key()),
                "score": h.chain_score,
                "log_score": h.log_score,
                "status": h.status.value,
                "parent": origin[0],
                "rollout": origin[1],
            }
            for h, origin in zip(candidate_set.candidates, candidate_set.origins)
        ],
        "selected": list(selected),
    }


def run_decode(
    question: Question,
    config: DecodeConfig,
    generator: GenerationBackend,
    evaluator: EvaluationBackend,
    prompts: PromptProvider,
) -> DecodeResult:
    """Full decode: expand, prune, decay until every hypothesis completes.

    The run is bitwise reproducible for a fixed seed on deterministic
    backends: pruning noise comes from per-timestep substreams of the
    seed, independent of backend call interleaving.
    """
    config = config.resolved_for(question.task_kind)
    assert config.sample_temp is not None and config.gen_temp is not None
    ledger = LedgerAccumulator()
    beam = BeamState(
        hypotheses=(Hypothesis(),),
        step_index=0,
        current_tau=config.sample_temp,
        rng_state=config.seed,
    )
    trace: list[dict] = []
    try:
        while any(h.is_active for h in beam.hypotheses) and beam.step_index < config.max_steps:
            t = beam.step_index + 1
            candidate_set = expand(beam, generator, evaluator, prompts, config, question, ledger)
            if config.dedup_candidates:
                candidate_set = dedup_candidates(candidate_set)
            rng = derive_rng(config.seed, "prune", t)
            selected = prune_indices(
                candidate_set, config.beam_size, beam.current_tau, rng, config.beam_score_domain
            )
            trace.append(_trace_record(t, beam.current_tau, candidate_set, selected))
            beam = BeamState(
                hypotheses=tuple(candidate_set.candidates[i] for i in selected),
                step_index=t,
                current_tau=decay_temperature(beam.current_tau, config.temp_decay),
                rng_state=config.seed,
            )
    except ExpandError as exc:
        raise DecodeAborted(
            f"decode aborted at step {beam.step_index + 1}: {exc}", trace=tuple(trace), cause=exc
        ) from exc
    return DecodeResult(
        final_beam=beam.hypotheses, trace=tuple(trace), ledger=ledger.total, config=config
    )


# -- exact enumeration oracle ---------------------------------------------


@dataclass(frozen=True, slots=True)
class ChainInfo:
    """One full scripted chain with its per-step score factors."""

    steps: tuple[str, ...]
    factors: tuple[float, ...]
    answer: str | None

    def score_at(self, depth: int | None = None) -> float:
        upto = len(self.factors) if depth is None else min(depth, len(self.factors))
        return float(np.prod(self.factors[:upto])) if upto else 1.0


def enumerate_chains(
    space: ScriptedSpace,
    lam: float,
    gen_temp: float,
    mode: StepProbMode = StepProbMode.LENGTH_NORMALIZED,
    limit: int = ENUMERATION_LIMIT,
) -> list[ChainInfo]:
    """Every full chain in the space, with exact per-step factors.

    Factors use the same temperature-reshaped generation probabilities the
    scripted backend samples with; chains outside the support of the
    reshaped distribution (possible only at ``gen_temp=0``) are excluded
    because they can never be generated.
    """
    del mode  # scripted steps are single pseudo-tokens; both modes coincide
    chains: list[ChainInfo] = []

    def walk(key: str, steps: tuple[str, ...], factors: tuple[float, ...]) -> None:
        edges = space.edges(key)
        probs = reshape_probs([e.p for e in edges], gen_temp)
        for edge, prob in zip(edges, probs):
            if prob <= 0.0:
                continue
            factor = prob**lam * edge.c ** (1.0 - lam)
            if edge.terminal:
                if len(chains) >= limit:
                    raise EnumerationLimitError(
                        f"space exceeds the enumeration limit of {limit} chains"
                    )
                chains.append(
                    ChainInfo(steps=steps + (edge.step,), factors=factors + (factor,), answer=edge.answer)
                )
            else:
                walk(edge.child, steps + (edge.step,), factors + (factor,))

    walk(space.root, (), ())
    return chains


def _softmax_over(members: Mapping[tuple[str, ...], float], tau: float) -> dict[tuple[str, ...], float]:
    # canonical member order: a full set and a subset containing the same
    # members then produce bit-identical probabilities
    keys = sorted(members)
    scores = np.array([members[k] for k in keys], dtype=np.float64)
    if tau == 0.0:
        best = scores.max()
        mask = scores == best
        probs = mask / mask.sum()
    else:
        shifted = (scores - scores.max()) / tau
        weights = np.exp(shifted)
        probs = weights / weights.sum()
    return {k: float(p) for k, p in zip(keys, probs)}


def exact_beam_distribution(
    space: ScriptedSpace,
    config: DecodeConfig,
    depth: int | None = None,
) -> dict[tuple[str, ...], float]:
    """The normalized chain distribution over the whole scripted space.

    With ``depth`` the members are the distinct length-``depth`` prefixes
    (chains that finish earlier stay frozen at full length, mirroring the
    engine); without it, the full chains.  This is the oracle the
    sampling path is verified against.
    """
    if config.sample_temp is None or config.gen_temp is None:
        raise ContractViolation("config temperatures must be resolved for enumeration")
    chains = enumerate_chains(space, config.lam, config.gen_temp, config.step_prob_mode)
    members: dict[tuple[str, ...], float] = {}
    for chain in chains:
        upto = len(chain.steps) if depth is None else min(depth, len(chain.steps))
        prefix = chain.steps[:upto]
        score = chain.score_at(upto)
        if prefix in members and not math.isclose(members[prefix], score, rel_tol=1e-12, abs_tol=0.0):
            raise ContractViolation(f"inconsistent scores for shared prefix {prefix!r}")
        members[prefix] = score
    return _softmax_over(members, config.sample_temp)


def exact_prune_distribution(
    log_weights: Sequence[float], k: int, limit: int = 12
) -> dict[frozenset[int], float]:
    """Exact k-subset distribution of sampling without replacement.

    ``log_weights`` are the unnormalized log-weights of the members (the
    same quantities Gumbel-top-k perturbs).  The probability of each
    unordered subset is the sum over its orderings of the sequential
    renormalized draw, enumerated directly.
    """
    n = len(log_weights)
    if n > limit:
        raise EnumerationLimitError(f"subset enumeration limited to {limit} members, got {n}")
    if not (1 <= k <= n):
        raise ContractViolation("k must be in [1, n]")
    shift = max(lw for lw in log_weights if lw > -math.inf)
    weights = [math.exp(lw - shift) if lw > -math.inf else 0.0 for lw in log_weights]
    total = sum(weights)
    out: dict[frozenset[int], float] = {}
    for subset in itertools.combinations(range(n), k):
        prob = 0.0
        for order in itertools.permutations(subset):
            term = 1.0
            remaining = total
            for idx in order:
                if remaining <= 0.0 or weights[idx] == 0.0:
                    term = 0.0
                    break
                term *= weights[idx] / remaining
                remaining -= weights[idx]
            prob += term
        if prob > 0.0:
            out[frozenset(subset)] = prob
    return out


def beam_log_weights(
    hypotheses: Sequence[Hypothesis], tau: float, domain: BeamScoreDomain
) -> list[float]:
    """The log-weights :func:`prune_indices` perturbs, for oracle reuse."""
    if tau <= 0.0:
        raise ContractViolation("log-weights are defined for tau > 0")
    if domain == BeamScoreDomain.LITERAL_EXP:
        return [h.chain_score / tau for h in hypotheses]
    return [h.log_score / tau if h.log_score > -math.inf else -math.inf for h in hypotheses]


def restriction_error_bound(
    space: ScriptedSpace,
    subset_size: int,
    tau: float,
    config: DecodeConfig,
    depth: int | None = None,
) -> float:
    """Worst-case gap between the full-space softmax and its restriction
    to a size-``subset_size`` member subset: ``r**2 * (1 - M/N) / M``
    where ``r`` is the ratio of the largest to smallest member weight."""
    if tau <= 0.0:
        raise ContractViolation("the bound is defined for tau > 0")
    if config.gen_temp is None:
        raise ContractViolation("config.gen_temp must be resolved")
    chains = enumerate_chains(space, config.lam, config.gen_temp, config.step_prob_mode)
    members: dict[tuple[str, ...], float] = {}
    for chain in chains:
        upto = len(chain.steps) if depth is None else min(depth, len(chain.steps))
        members[chain.steps[:upto]] = chain.score_at(upto)
    scores = list(members.values())
    n = len(scores)
    if not (1 <= subset_size <= n):
        raise ContractViolation(f"subset_size must be in [1, {n}]")
    ratio = math.exp((max(scores) - min(scores)) / tau)
    return ratio**2 * (1.0 - subset_size / n) / subset_size


def restriction_gap(
    full_scores: Mapping[tuple[str, ...], float],
    subset: Sequence[tuple[str, ...]],
    tau: float,
) -> float:
    """Observed ``max |P_full - P_subset|`` over the subset's members."""
    if tau <= 0.0:
        raise ContractViolation("the gap is defined for tau > 0")
    full = _softmax_over(full_scores, tau)
    restricted = _softmax_over({key: full_scores[key] for key in subset}, tau)
    return max(abs(full[key] - restricted[key]) for key in subset)
