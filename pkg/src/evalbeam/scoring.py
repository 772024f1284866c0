"""Step scoring: generation probability, correctness mixing, accumulation.

The per-step factor is ``gen_prob**lam * correctness**(1 - lam)``; a chain's
score is the product of its factors, accumulated in log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .core import StepProbMode, StepScore
from .exceptions import ContractViolation

__all__ = [
    "ScoringPolicy",
    "step_generation_prob",
    "combine",
    "accumulate_chain_score",
    "make_step_score",
]


@dataclass(frozen=True, slots=True)
class ScoringPolicy:
    lam: float = 0.5
    step_prob_mode: StepProbMode = StepProbMode.LENGTH_NORMALIZED

    def __post_init__(self) -> None:
        if not (0.0 <= self.lam <= 1.0):
            raise ContractViolation("lam must be in [0, 1]")


def step_generation_prob(token_logprobs: Sequence[float], mode: StepProbMode) -> float:
    """Collapse a step's token log-probabilities to one probability.

    ``RAW_PRODUCT`` is the joint probability of the token sequence;
    ``LENGTH_NORMALIZED`` is its per-token geometric mean, which removes
    the systematic bias toward short steps.
    """
    if len(token_logprobs) == 0:
        raise ContractViolation("token_logprobs must be non-empty")
    if any(lp > 0.0 for lp in token_logprobs):
        raise ContractViolation("token log-probabilities must be <= 0")
    total = math.fsum(token_logprobs)
    if mode == StepProbMode.LENGTH_NORMALIZED:
        total /= len(token_logprobs)
    return min(math.exp(total), 1.0)


def combine(gen_prob: float, correctness: float, lam: float) -> float:
    """Weighted geometric mean of generation probability and correctness.

    ``lam=1`` returns ``gen_prob`` exactly and ``lam=0`` returns
    ``correctness`` exactly; ``0**0`` is taken as 1 so a zero correctness
    does not poison the pure-generation extreme.
    """
    if not (0.0 < gen_prob <= 1.0):
        raise ContractViolation(f"gen_prob must be in (0, 1], got {gen_prob}")
    if not (0.0 <= correctness <= 1.0):
        raise ContractViolation(f"correctness must be in [0, 1], got {correctness}")
    if not (0.0 <= lam <= 1.0):
        raise ContractViolation(f"lam must be in [0, 1], got {lam}")
    return gen_prob**lam * correctness ** (1.0 - lam)


def accumulate_chain_score(prev_score: float, factor: float) -> float:
    """Multiply one more factor into a chain score, in log domain."""
    if not (0.0 <= prev_score <= 1.0) or not (0.0 <= factor <= 1.0):
        raise ContractViolation("chain score factors must be in [0, 1]")
    if prev_score == 0.0 or factor == 0.0:
        return 0.0
    product = math.exp(math.log(prev_score) + math.log(factor))
    return min(max(product, 0.0), 1.0)


def make_step_score(
    token_logprobs: Sequence[float],
    correctness: float,
    policy: ScoringPolicy,
) -> StepScore:
    """Score one candidate step under a policy."""
    gen_prob = step_generation_prob(token_logprobs, policy.step_prob_mode)
    return StepScore(
        gen_prob=gen_prob,
        correctness=correctness,
        combined=combine(gen_prob, correctness, policy.lam),
    )
