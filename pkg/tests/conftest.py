"""Shared scripted-space fixtures and hypothesis builders."""

from __future__ import annotations

import math

import pytest

from evalbeam.backends.scripted import ScriptedEdge, ScriptedSpace
from evalbeam.core import Hypothesis, ReasoningStep, StepScore, extend_hypothesis
from evalbeam.engine import CandidateSet


def edge(step, p, c, terminal=False, answer=None, child=None):
    return ScriptedEdge(step=step, p=p, c=c, terminal=terminal, answer=answer, child=child)


@pytest.fixture
def two_leaf_space() -> ScriptedSpace:
    """One decision: two terminal continuations with distinct answers."""
    return ScriptedSpace(
        root="r",
        nodes={
            "r": (
                edge("So the answer is 1.", 0.7, 0.9, terminal=True, answer="1"),
                edge("So the answer is 2.", 0.3, 0.5, terminal=True, answer="2"),
            )
        },
    )


@pytest.fixture
def planted_error_space() -> ScriptedSpace:
    """A fluent-but-wrong first step against a clumsy-but-right one.

    The wrong step is much more probable under the generator (p=0.8) but
    the evaluator flags it (c=0.05); the right step is the mirror image.
    Each continues deterministically to its own answer.
    """
    return ScriptedSpace(
        root="r",
        nodes={
            "r": (
                edge("double the first number", 0.8, 0.05, child="wrong"),
                edge("add the two numbers", 0.2, 0.95, child="right"),
            ),
            "wrong": (edge("So the answer is 13.", 1.0, 0.9, terminal=True, answer="13"),),
            "right": (edge("So the answer is 8.", 1.0, 0.9, terminal=True, answer="8"),),
        },
    )


@pytest.fixture
def eight_chain_space() -> ScriptedSpace:
    """Eight single-step chains with spread-out scores."""
    probs = [0.30, 0.20, 0.15, 0.10, 0.09, 0.08, 0.05, 0.03]
    cs = [0.9, 0.2, 0.7, 0.5, 0.95, 0.1, 0.6, 0.35]
    edges = tuple(
        edge(f"So the answer is {i}.", p, c, terminal=True, answer=str(i))
        for i, (p, c) in enumerate(zip(probs, cs))
    )
    return ScriptedSpace(root="r", nodes={"r": edges})


@pytest.fixture
def adversarial_space() -> ScriptedSpace:
    """Uniform generation, correctness pinned to {0, 1}.

    With the mixing weight at 0 the chain scores are exactly 0 or 1, the
    most hostile configuration for the softmax-restriction bound.
    """
    edges = tuple(
        edge(f"s{i}", 1.0 / 8.0, 1.0 if i % 2 == 0 else 0.0, terminal=True, answer=str(i))
        for i in range(8)
    )
    return ScriptedSpace(root="r", nodes={"r": edges})


def make_step(text="step", logprob=math.log(0.5), terminal=False) -> ReasoningStep:
    return ReasoningStep(text=text, token_logprobs=(logprob,), is_terminal=terminal)


def make_score(combined: float, gen_prob: float = 1.0, correctness: float | None = None) -> StepScore:
    return StepScore(
        gen_prob=gen_prob,
        correctness=correctness if correctness is not None else combined,
        combined=combined,
    )


def hypothesis_with_score(chain_score: float, steps: int = 1) -> Hypothesis:
    """A hypothesis whose accumulated score is exactly ``chain_score``."""
    h = Hypothesis()
    per_step = chain_score ** (1.0 / steps)
    for i in range(steps):
        h = extend_hypothesis(h, make_step(text=f"s{i}"), make_score(per_step))
    return h


def candidate_set_from_scores(scores) -> CandidateSet:
    hyps = tuple(hypothesis_with_score(s) if s > 0 else _zero_hypothesis() for s in scores)
    return CandidateSet(candidates=hyps, origins=tuple((0, i) for i in range(len(hyps))))


def _zero_hypothesis() -> Hypothesis:
    return extend_hypothesis(Hypothesis(), make_step(), make_score(0.0, gen_prob=0.5, correctness=0.0))
