"""Deterministic scripted backends for oracle testing.

A :class:`ScriptedSpace` is a finite tree of steps with exact generation
and evaluation probabilities.  The scripted backends sample from it the
way a real model would be sampled, which lets the test suite compare the
engine's behavior against brute-force enumeration of the same tree.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import STEP_SEPARATOR, CostLedger, ReasoningStep
from ..exceptions import ContractViolation, MissingNodeError, SpaceValidationError
from .base import StopRules, derive_rng

__all__ = [
    "ScriptedEdge",
    "ScriptedSpace",
    "scripted_sample",
    "scripted_correctness",
    "ScriptedGenerationBackend",
    "ScriptedEvaluationBackend",
]

_PROB_SUM_TOL = 1e-9


@dataclass(frozen=True, slots=True)
class ScriptedEdge:
    """One scripted continuation: a step with its exact probabilities."""

    step: str
    p: float
    c: float
    terminal: bool = False
    answer: str | None = None
    child: str | None = None


@dataclass(frozen=True)
class ScriptedSpace:
    """A finite, acyclic tree of scripted reasoning steps."""

    root: str
    nodes: dict[str, tuple[ScriptedEdge, ...]]

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.root not in self.nodes:
            raise SpaceValidationError(f"root node {self.root!r} is not defined")
        seen: set[str] = set()
        stack = [self.root]
        while stack:
            key = stack.pop()
            if key in seen:
                raise SpaceValidationError(f"node {key!r} is reachable twice; space must be a tree")
            seen.add(key)
            edges = self.nodes.get(key)
            if edges is None:
                raise SpaceValidationError(f"edge points at undefined node {key!r}")
            if not edges:
                raise SpaceValidationError(f"node {key!r} has no outgoing edges")
            total = sum(e.p for e in edges)
            if abs(total - 1.0) > _PROB_SUM_TOL:
                raise SpaceValidationError(f"probabilities at node {key!r} sum to {total}, not 1")
            step_texts = [e.step for e in edges]
            if len(set(step_texts)) != len(step_texts):
                raise SpaceValidationError(f"duplicate step text at node {key!r}")
            for e in edges:
                if not (0.0 <= e.c <= 1.0):
                    raise SpaceValidationError(f"correctness {e.c} at node {key!r} out of [0, 1]")
                if e.p <= 0.0:
                    raise SpaceValidationError(f"non-positive probability at node {key!r}")
                if e.terminal and e.child is not None:
                    raise SpaceValidationError(f"terminal edge {e.step!r} must not have a child")
                if not e.terminal:
                    if e.child is None:
                        raise SpaceValidationError(
                            f"leaf edge {e.step!r} at node {key!r} must be terminal"
                        )
                    stack.append(e.child)
        unreachable = set(self.nodes) - seen
        if unreachable:
            raise SpaceValidationError(f"unreachable nodes: {sorted(unreachable)}")

    def edges(self, key: str) -> tuple[ScriptedEdge, ...]:
        try:
            return self.nodes[key]
        except KeyError:
            raise MissingNodeError(f"unknown node key {key!r}") from None

    def edge(self, key: str, step_text: str) -> ScriptedEdge:
        for e in self.edges(key):
            if e.step == step_text:
                return e
        raise MissingNodeError(f"no edge {step_text!r} at node {key!r}")

    def resolve(self, prefix_steps: Sequence[str]) -> str:
        """Walk from the root along step texts to the node they lead to."""
        key = self.root
        for text in prefix_steps:
            e = self.edge(key, text)
            if e.child is None:
                raise MissingNodeError(f"step {text!r} is terminal; no node beyond it")
            key = e.child
        return key

    # -- serialization ----------------------------------------------------

    @classmethod
    def from_dict(cls, payload: dict) -> "ScriptedSpace":
        try:
            root = payload["root"]
            raw_nodes = payload["nodes"]
        except KeyError as exc:
            raise SpaceValidationError(f"space document missing field {exc}") from None
        nodes = {
            key: tuple(
                ScriptedEdge(
                    step=entry["step"],
                    p=float(entry["p"]),
                    c=float(entry["c"]),
                    terminal=bool(entry.get("terminal", False)),
                    answer=entry.get("answer"),
                    child=entry.get("child"),
                )
                for entry in entries
            )
            for key, entries in raw_nodes.items()
        }
        return cls(root=root, nodes=nodes)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedSpace":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "nodes": {
                key: [
                    {
                        "step": e.step,
                        "p": e.p,
                        "c": e.c,
                        "terminal": e.terminal,
                        "answer": e.answer,
                        "child": e.child,
                    }
                    for e in edges
                ]
                for key, edges in self.nodes.items()
            },
        }


def reshape_probs(probs: Sequence[float], gen_temp: float) -> np.ndarray:
    """Temperature transform ``p_i**(1/T) / sum_j p_j**(1/T)``.

    ``gen_temp=0`` degenerates to a point mass on the argmax (lowest index
    on ties); ``gen_temp=1`` reproduces the stored distribution.
    """
    arr = np.asarray(probs, dtype=np.float64)
    if gen_temp < 0.0:
        raise ContractViolation("gen_temp must be >= 0")
    if gen_temp == 0.0:
        out = np.zeros_like(arr)
        out[int(np.argmax(arr))] = 1.0
        return out
    powered = arr ** (1.0 / gen_temp)
    return powered / powered.sum()


def scripted_sample(
    space: ScriptedSpace,
    prefix_key: str,
    n: int,
    gen_temp: float,
    rng: np.random.Generator,
) -> list[ReasoningStep]:
    """Draw ``n`` i.i.d. steps from a node's temperature-reshaped distribution.

    Each returned step carries a single pseudo-token whose log-probability
    is the log of the reshaped probability it was drawn with.
    """
    edges = space.edges(prefix_key)
    probs = reshape_probs([e.p for e in edges], gen_temp)
    indices = rng.choice(len(edges), size=n, p=probs)
    out = []
    for idx in indices:
        e = edges[int(idx)]
        logprob = float(np.log(probs[int(idx)]))
        out.append(ReasoningStep(text=e.step, token_logprobs=(logprob,), is_terminal=e.terminal))
    return out


def scripted_correctness(space: ScriptedSpace, prefix_key: str, step_text: str) -> float:
    """Stored correctness value of the (node, step) edge."""
    return space.edge(prefix_key, step_text).c


def _split_context(context: str) -> list[str]:
    return context.split(STEP_SEPARATOR) if context else []


class ScriptedGenerationBackend:
    """Generation model stand-in driven by a scripted space.

    Each call's randomness is derived from ``(seed, prefix_key, ordinal)``
    where the ordinal counts calls made for that prefix, so replays with
    the same seed reproduce the exact step sequences regardless of how
    calls interleave across workers.
    """

    def __init__(self, space: ScriptedSpace, seed: int = 0):
        self.space = space
        self.seed = seed
        self._ordinals: dict[str, int] = {}
        self._lock = threading.Lock()

    def sample_steps(
        self, context: str, n: int, gen_temp: float, stop_rules: StopRules
    ) -> tuple[list[ReasoningStep], CostLedger]:
        key = self.space.resolve(_split_context(context))
        with self._lock:
            ordinal = self._ordinals.get(key, 0)
            self._ordinals[key] = ordinal + 1
        rng = derive_rng(self.seed, "gen", key, ordinal)
        steps = scripted_sample(self.space, key, n, gen_temp, rng)
        # one pseudo-token per sampled step
        delta = CostLedger(generated_tokens=n, api_calls=1)
        return steps, delta


class ScriptedEvaluationBackend:
    """Evaluation model stand-in: exact stored correctness per edge.

    Token accounting mirrors the one-pseudo-token-per-step convention of
    the scripted generator: evaluating a t-step chain costs t input
    tokens plus the single option token it would generate.
    """

    def __init__(self, space: ScriptedSpace):
        self.space = space

    def correctness(self, context: str) -> tuple[float, CostLedger]:
        steps = _split_context(context)
        if not steps:
            raise ContractViolation("evaluation context must contain at least one step")
        parent_key = self.space.resolve(steps[:-1])
        value = scripted_correctness(self.space, parent_key, steps[-1])
        delta = CostLedger(eval_input_tokens=len(steps), eval_generated_tokens=1, api_calls=1)
        return value, delta
