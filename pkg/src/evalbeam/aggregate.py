"""Turning final-beam chains into answers.

A completed chain yields a (possibly empty) set of canonical answers:
program chains by executing them, free-text chains by extracting the span
after the terminal answer marker.  Each chain then spreads one unit of
vote mass uniformly over its answer set, and the majority answer wins,
with the chain score breaking ties.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .core import Hypothesis, HypothesisStatus, TaskKind, chain_prefix_text
from .exceptions import ContractViolation
from .executor import ProgramExecutor

__all__ = [
    "AnswerSource",
    "AnswerSet",
    "VoteResult",
    "canonicalize_answer",
    "extract_answers",
    "answer_distribution",
    "majority_vote",
    "single_chain_answer",
    "build_program",
]

_ANSWER_MARKER = re.compile(r"\bso the answer is\b\s*(.+?)\s*$", re.IGNORECASE)
_SIGNIFICANT_DIGITS = 6


class AnswerSource(str, Enum):
    PROGRAM_EXECUTION = "program_execution"
    TEXT_EXTRACTION = "text_extraction"


@dataclass(frozen=True, slots=True)
class AnswerSet:
    """Canonical answers one chain produced (empty when it produced none)."""

    values: frozenset[str]
    source: AnswerSource

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True, slots=True)
class VoteResult:
    winner: str | None
    tally: dict[str, float]
    tie_broken_by_score: bool = False


def canonicalize_answer(raw: str) -> str:
    """One equality definition for answers everywhere.

    Numerals parse as decimals, round to 6 significant digits, and drop
    trailing zeros so ``8.0`` meets ``"8"``; text trims, loses a trailing
    period, and lowercases.
    """
    text = raw.strip()
    if text.endswith("."):
        text = text[:-1].strip()
    numeric = text.replace(",", "")
    if numeric.startswith("$"):
        numeric = numeric[1:]
    try:
        value = float(numeric)
    except ValueError:
        return text.lower()
    formatted = f"{value:.{_SIGNIFICANT_DIGITS}g}"
    return formatted


def build_program(h: Hypothesis, entry_point: str = "solution") -> str:
    """Assemble the executable program from a program-aided chain."""
    return f"def {entry_point}():\n" + chain_prefix_text(h) + "\n"


def extract_answers(
    h: Hypothesis,
    task_kind: TaskKind,
    executor: ProgramExecutor | None = None,
) -> AnswerSet:
    """Answers a completed chain yields; empty when it yields none.

    Program chains run through the executor bridge; a program failure or
    timeout is an empty answer set, not an error (only bridge transport
    failures raise).  Free-text chains match the terminal answer marker.
    """
    if h.status != HypothesisStatus.COMPLETED:
        raise ContractViolation("answers are extracted from completed hypotheses only")
    if task_kind == TaskKind.PROGRAM_AIDED:
        if executor is None:
            raise ContractViolation("program-aided extraction requires an executor")
        outcome = executor.run(build_program(h))
        values = frozenset({canonicalize_answer(outcome.result)}) if outcome.ok and outcome.result is not None else frozenset()
        return AnswerSet(values=values, source=AnswerSource.PROGRAM_EXECUTION)
    values: set[str] = set()
    for step in reversed(h.steps):
        match = _ANSWER_MARKER.search(step.text)
        if match:
            values.add(canonicalize_answer(match.group(1)))
            break
    return AnswerSet(values=frozenset(values), source=AnswerSource.TEXT_EXTRACTION)


def answer_distribution(answer: str, answers: AnswerSet) -> float:
    """Mass a chain's answer set puts on one answer: ``1/|A|`` for members,
    0 otherwise, and 0 for everything when the set is empty."""
    if not answers.values:
        return 0.0
    return 1.0 / len(answers.values) if answer in answers.values else 0.0


def majority_vote(final_beam: Sequence[tuple[Hypothesis, AnswerSet]]) -> VoteResult:
    """Vote over the final beam; ties break by the best supporting chain.

    Each chain spreads one unit of mass uniformly over its answer set, so
    empty sets contribute nothing and multi-answer sets split their vote.
    Duplicate chains count as distinct votes.
    """
    if not final_beam:
        raise ContractViolation("majority_vote requires a non-empty beam")
    tally: dict[str, float] = defaultdict(float)
    support: dict[str, float] = defaultdict(float)
    for hypothesis, answers in final_beam:
        for answer in answers.values:
            tally[answer] += answer_distribution(answer, answers)
            support[answer] = max(support[answer], hypothesis.chain_score)
    if not tally:
        return VoteResult(winner=None, tally={})
    best_mass = max(tally.values())
    leaders = [a for a, mass in tally.items() if mass == best_mass]
    if len(leaders) == 1:
        return VoteResult(winner=leaders[0], tally=dict(tally))
    winner = max(leaders, key=lambda a: support[a])
    return VoteResult(winner=winner, tally=dict(tally), tie_broken_by_score=True)


def single_chain_answer(
    final_beam: Sequence[tuple[Hypothesis, AnswerSet]],
) -> str | None:
    """The answer of the highest-scoring chain (single-chain protocol).

    Multi-answer sets fall back to their lexicographically first member
    so the choice is deterministic.
    """
    if not final_beam:
        raise ContractViolation("single_chain_answer requires a non-empty beam")
    best = max(final_beam, key=lambda pair: pair[0].log_score)
    if not best[1].values:
        return None
    return sorted(best[1].values)[0]
