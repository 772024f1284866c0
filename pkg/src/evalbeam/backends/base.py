"""Backend interfaces for the generation and evaluation models.

Both interfaces return a cost delta alongside their payload; the engine
owns the single aggregation point that folds deltas into the run ledger,
so backend implementations stay safe for concurrent invocation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from ..core import CostLedger, ReasoningStep
from ..exceptions import ContractViolation

__all__ = ["StopRules", "GenerationBackend", "EvaluationBackend", "derive_rng", "stable_seed"]


@dataclass(frozen=True, slots=True)
class StopRules:
    """Step segmentation boundaries for the generation model."""

    stop_strings: tuple[str, ...] = ("\n",)
    max_tokens_per_step: int = 128

    def __post_init__(self) -> None:
        if not self.stop_strings and self.max_tokens_per_step <= 0:
            raise ContractViolation("at least one stop rule must be active")
        if self.max_tokens_per_step <= 0:
            raise ContractViolation("max_tokens_per_step must be positive")


@runtime_checkable
class GenerationBackend(Protocol):
    """Draws candidate next steps from the generation model."""

    def sample_steps(
        self, context: str, n: int, gen_temp: float, stop_rules: StopRules
    ) -> tuple[list[ReasoningStep], CostLedger]:
        """Return exactly ``n`` sampled steps (duplicates allowed) plus the
        token-count delta for the call."""
        ...


@runtime_checkable
class EvaluationBackend(Protocol):
    """Scores the newest step of a chain for correctness."""

    def correctness(self, context: str) -> tuple[float, CostLedger]:
        """Probability mass of the correct-option token at the evaluation
        position, in [0, 1], plus the token-count delta."""
        ...


def stable_seed(*parts: object) -> int:
    """Platform-independent 64-bit seed derived from arbitrary parts.

    Used to key independent randomness substreams by call coordinates so
    concurrency and call order cannot perturb reproducibility.
    """
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(*parts: object) -> np.random.Generator:
    """Fresh generator for the substream identified by ``parts``."""
    return np.random.default_rng(stable_seed(*parts))
