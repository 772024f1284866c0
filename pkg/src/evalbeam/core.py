"""Domain types shared by every module, plus elementary chain building.

A reasoning chain is an ordered list of steps; each step carries the token
log-probabilities reported by the generation model and a per-step score
combining generation probability with self-evaluated correctness.  Chains
are immutable values: extending one returns a new value, which makes
concurrent expansion and exact replay safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

from .exceptions import ContractViolation

__all__ = [
    "TaskKind",
    "HypothesisStatus",
    "StepProbMode",
    "BeamScoreDomain",
    "Question",
    "ReasoningStep",
    "StepScore",
    "CostLedger",
    "Hypothesis",
    "DecodeConfig",
    "extend_hypothesis",
    "chain_prefix_text",
]

STEP_SEPARATOR = "\n"


class TaskKind(str, Enum):
    PROGRAM_AIDED = "program_aided"
    FREE_TEXT = "free_text"


class HypothesisStatus(str, Enum):
    ACTIVE = "active"
    COMPLETED = "completed"
    FAILED = "failed"


class StepProbMode(str, Enum):
    """How a multi-token step collapses to a single generation probability."""

    RAW_PRODUCT = "raw_product"
    LENGTH_NORMALIZED = "length_normalized"


class BeamScoreDomain(str, Enum):
    """How the pruning softmax treats the accumulated chain score.

    ``LITERAL_EXP`` exponentiates the score itself; on long chains the
    scores all underflow toward 0 and the softmax flattens, so
    ``LOG_SCORE`` (softmax over the log of the score) is offered as an
    explicit switch.
    """

    LITERAL_EXP = "literal_exp"
    LOG_SCORE = "log_score"


@dataclass(frozen=True, slots=True)
class Question:
    """One problem instance: the statement plus optional gold answer."""

    id: str
    text: str
    gold_answer: str | None = None
    task_kind: TaskKind = TaskKind.FREE_TEXT

    def __post_init__(self) -> None:
        if not self.text:
            raise ContractViolation("question text must be non-empty")


@dataclass(frozen=True, slots=True)
class ReasoningStep:
    """A single reasoning step: one program line or one sentence."""

    text: str
    token_logprobs: tuple[float, ...]
    is_terminal: bool = False

    def __post_init__(self) -> None:
        if not self.text:
            raise ContractViolation("step text must be non-empty")
        if any(lp > 0.0 for lp in self.token_logprobs):
            raise ContractViolation("token log-probabilities must be <= 0")


@dataclass(frozen=True, slots=True)
class StepScore:
    """Per-step score factors: generation probability, correctness, and
    their weighted geometric combination."""

    gen_prob: float
    correctness: float
    combined: float

    def __post_init__(self) -> None:
        if not (0.0 < self.gen_prob <= 1.0):
            raise ContractViolation(f"gen_prob must be in (0, 1], got {self.gen_prob}")
        if not (0.0 <= self.correctness <= 1.0):
            raise ContractViolation(f"correctness must be in [0, 1], got {self.correctness}")
        if not (0.0 <= self.combined <= 1.0):
            raise ContractViolation(f"combined must be in [0, 1], got {self.combined}")


@dataclass(frozen=True, slots=True)
class CostLedger:
    """Token and API-call counters for one run.

    Instances are immutable; the engine accumulates deltas through a single
    aggregation point so counters are monotone non-decreasing over a run.
    """

    generated_tokens: int = 0
    eval_input_tokens: int = 0
    eval_generated_tokens: int = 0
    api_calls: int = 0

    def __post_init__(self) -> None:
        for name in ("generated_tokens", "eval_input_tokens", "eval_generated_tokens", "api_calls"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name} must be non-negative")

    @property
    def total_cost(self) -> int:
        return self.generated_tokens + self.eval_input_tokens + self.eval_generated_tokens

    def __add__(self, other: "CostLedger") -> "CostLedger":
        return CostLedger(
            generated_tokens=self.generated_tokens + other.generated_tokens,
            eval_input_tokens=self.eval_input_tokens + other.eval_input_tokens,
            eval_generated_tokens=self.eval_generated_tokens + other.eval_generated_tokens,
            api_calls=self.api_calls + other.api_calls,
        )

    def as_dict(self) -> dict[str, int]:
        return {
            "generated_tokens": self.generated_tokens,
            "eval_input_tokens": self.eval_input_tokens,
            "eval_generated_tokens": self.eval_generated_tokens,
            "api_calls": self.api_calls,
            "total_cost": self.total_cost,
        }


@dataclass(frozen=True, slots=True)
class Hypothesis:
    """A partial reasoning chain with its accumulated score and cost.

    ``log_score`` (sum of per-step log factors) is the authoritative form
    for comparisons; ``chain_score`` is derived from it so long chains do
    not silently underflow during ranking.
    """

    steps: tuple[ReasoningStep, ...] = ()
    scores: tuple[StepScore, ...] = ()
    log_score: float = 0.0
    status: HypothesisStatus = HypothesisStatus.ACTIVE
    cost: CostLedger = field(default_factory=CostLedger)

    def __post_init__(self) -> None:
        if len(self.steps) != len(self.scores):
            raise ContractViolation("steps and scores must have equal length")

    @property
    def chain_score(self) -> float:
        return math.exp(self.log_score) if self.log_score > -math.inf else 0.0

    @property
    def is_active(self) -> bool:
        return self.status == HypothesisStatus.ACTIVE

    def step_texts(self) -> tuple[str, ...]:
        return tuple(step.text for step in self.steps)

    def key(self) -> tuple[str, ...]:
        """Identity of the chain for deduplication and trace output."""
        return self.step_texts()


def extend_hypothesis(
    h: Hypothesis,
    step: ReasoningStep,
    score: StepScore,
    max_steps: int | None = None,
    cost_delta: CostLedger | None = None,
) -> Hypothesis:
    """Append one scored step, multiplying the chain score by its factor.

    The returned hypothesis is completed when the step is terminal or the
    chain has reached ``max_steps``.  Extending a non-active hypothesis is
    a contract violation.
    """
    if h.status != HypothesisStatus.ACTIVE:
        raise ContractViolation(f"cannot extend a hypothesis with status {h.status.value}")
    log_factor = math.log(score.combined) if score.combined > 0.0 else -math.inf
    new_len = len(h.steps) + 1
    completed = step.is_terminal or (max_steps is not None and new_len >= max_steps)
    return Hypothesis(
        steps=h.steps + (step,),
        scores=h.scores + (score,),
        log_score=h.log_score + log_factor,
        status=HypothesisStatus.COMPLETED if completed else HypothesisStatus.ACTIVE,
        cost=h.cost + cost_delta if cost_delta is not None else h.cost,
    )


def chain_prefix_text(h: Hypothesis) -> str:
    """Serialize the chain for prompt construction (newline-joined steps)."""
    return STEP_SEPARATOR.join(step.text for step in h.steps)


_TAU_DEFAULTS = {TaskKind.PROGRAM_AIDED: 0.5, TaskKind.FREE_TEXT: 0.2}
_GAMMA_DEFAULTS = {TaskKind.PROGRAM_AIDED: 0.6, TaskKind.FREE_TEXT: 0.3}


@dataclass(frozen=True, slots=True)
class DecodeConfig:
    """Every decoding hyperparameter in one place.

    ``sample_temp`` and ``gen_temp`` default to per-task values; use
    ``DecodeConfig.defaults(task_kind)`` or leave them ``None`` and the
    engine resolves them from the question's task kind.
    """

    beam_size: int = 5
    rollouts_per_beam: int = 16
    lam: float = 0.5
    sample_temp: float | None = None
    temp_decay: float = 0.5
    gen_temp: float | None = None
    max_steps: int = 16
    step_prob_mode: StepProbMode = StepProbMode.LENGTH_NORMALIZED
    beam_score_domain: BeamScoreDomain = BeamScoreDomain.LITERAL_EXP
    dedup_candidates: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ContractViolation("beam_size must be a positive integer")
        if self.rollouts_per_beam < 1:
            raise ContractViolation("rollouts_per_beam must be a positive integer")
        if not (0.0 <= self.lam <= 1.0):
            raise ContractViolation("lam must be in [0, 1]")
        if self.sample_temp is not None and self.sample_temp < 0.0:
            raise ContractViolation("sample_temp must be >= 0")
        if not (0.0 <= self.temp_decay <= 1.0):
            raise ContractViolation("temp_decay must be in [0, 1]")
        if self.gen_temp is not None and self.gen_temp < 0.0:
            raise ContractViolation("gen_temp must be >= 0")
        if self.max_steps < 1:
            raise ContractViolation("max_steps must be a positive integer")
        if self.seed < 0:
            raise ContractViolation("seed must be an unsigned integer")

    @classmethod
    def defaults(cls, task_kind: TaskKind, **overrides) -> "DecodeConfig":
        """Fully resolved config for a task kind."""
        cfg = cls(**overrides)
        return replace(
            cfg,
            sample_temp=cfg.sample_temp if cfg.sample_temp is not None else _TAU_DEFAULTS[task_kind],
            gen_temp=cfg.gen_temp if cfg.gen_temp is not None else _GAMMA_DEFAULTS[task_kind],
        )

    def resolved_for(self, task_kind: TaskKind) -> "DecodeConfig":
        """Fill any per-task defaults left unset."""
        if self.sample_temp is not None and self.gen_temp is not None:
            return self
        return replace(
            self,
            sample_temp=self.sample_temp if self.sample_temp is not None else _TAU_DEFAULTS[task_kind],
            gen_temp=self.gen_temp if self.gen_temp is not None else _GAMMA_DEFAULTS[task_kind],
        )

    def as_dict(self) -> dict:
        return {
            "beam_size": self.beam_size,
            "rollouts_per_beam": self.rollouts_per_beam,
            "lam": self.lam,
            "sample_temp": self.sample_temp,
            "temp_decay": self.temp_decay,
            "gen_temp": self.gen_temp,
            "max_steps": self.max_steps,
            "step_prob_mode": self.step_prob_mode.value,
            "beam_score_domain": self.beam_score_domain.value,
            "dedup_candidates": self.dedup_candidates,
            "seed": self.seed,
        }
