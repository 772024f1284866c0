"""Answer extraction, the per-chain answer distribution, and voting."""

from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from evalbeam.aggregate import (
    AnswerSet,
    AnswerSource,
    answer_distribution,
    build_program,
    canonicalize_answer,
    extract_answers,
    majority_vote,
    single_chain_answer,
)
from evalbeam.core import Hypothesis, TaskKind, extend_hypothesis
from evalbeam.exceptions import ContractViolation
from evalbeam.executor import ExecOutcome, StubExecutor

from conftest import hypothesis_with_score, make_score, make_step


def completed_chain(*texts: str, score: float = 0.5) -> Hypothesis:
    h = Hypothesis()
    for i, text in enumerate(texts):
        h = extend_hypothesis(h, make_step(text, terminal=(i == len(texts) - 1)), make_score(score))
    return h


def text_answers(value: str | None) -> AnswerSet:
    values = frozenset() if value is None else frozenset({value})
    return AnswerSet(values=values, source=AnswerSource.TEXT_EXTRACTION)


class TestCanonicalize:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("6", "6"),
            ("8.0", "8"),
            (" 8 ", "8"),
            ("6.", "6"),
            ("1,234", "1234"),
            ("$15", "15"),
            ("Yes.", "yes"),
            ("(e)", "(e)"),
            ("0.142857142857", "0.142857"),
            ("5.45", "5.45"),
        ],
    )
    def test_examples(self, raw, expected):
        assert canonicalize_answer(raw) == expected

    @given(st.text(min_size=0, max_size=30))
    def test_idempotent(self, raw):
        once = canonicalize_answer(raw)
        assert canonicalize_answer(once) == once


class TestExtractAnswers:
    def test_free_text_terminal_marker(self):
        h = completed_chain("There are 6 left.", "So the answer is 6.")
        answers = extract_answers(h, TaskKind.FREE_TEXT)
        assert answers.values == frozenset({"6"})
        assert answers.source == AnswerSource.TEXT_EXTRACTION

    def test_free_text_no_marker_is_empty(self):
        h = completed_chain("Nothing conclusive here")
        assert extract_answers(h, TaskKind.FREE_TEXT).values == frozenset()

    def test_program_execution_success(self):
        h = completed_chain(
            "    money_initial = 23",
            "    bagels = 5",
            "    bagel_cost = 3",
            "    money_spent = bagels * bagel_cost",
            "    money_left = money_initial - money_spent",
            "    result = money_left",
            "    return result",
        )
        program = build_program(h)
        executor = StubExecutor({program: "8"})
        answers = extract_answers(h, TaskKind.PROGRAM_AIDED, executor)
        assert answers.values == frozenset({"8"})
        assert answers.source == AnswerSource.PROGRAM_EXECUTION
        assert executor.calls == [program]

    def test_program_failure_is_empty_set(self):
        h = completed_chain("    return 1/0")
        executor = StubExecutor(lambda program: ExecOutcome(status="error", diagnostic="boom"))
        assert extract_answers(h, TaskKind.PROGRAM_AIDED, executor).values == frozenset()

    def test_program_requires_executor(self):
        h = completed_chain("    return 1")
        with pytest.raises(ContractViolation):
            extract_answers(h, TaskKind.PROGRAM_AIDED)

    def test_active_hypothesis_rejected(self):
        with pytest.raises(ContractViolation):
            extract_answers(Hypothesis(), TaskKind.FREE_TEXT)

    def test_build_program_wraps_chain(self):
        h = completed_chain("    x = 1", "    return x")
        assert build_program(h) == "def solution():\n    x = 1\n    return x\n"


class TestAnswerDistribution:
    def test_singleton(self):
        assert answer_distribution("5", text_answers("5")) == 1.0

    def test_two_way_split(self):
        answers = AnswerSet(values=frozenset({"3", "7"}), source=AnswerSource.TEXT_EXTRACTION)
        assert answer_distribution("3", answers) == 0.5

    def test_empty_set_gives_zero(self):
        assert answer_distribution("anything", text_answers(None)) == 0.0

    @given(st.sets(st.text(min_size=1, max_size=5), min_size=0, max_size=6))
    def test_normalization(self, values):
        answers = AnswerSet(values=frozenset(values), source=AnswerSource.TEXT_EXTRACTION)
        total = sum(answer_distribution(v, answers) for v in values)
        if values:
            assert total == pytest.approx(1.0)
        else:
            assert total == 0.0


class TestMajorityVote:
    def test_plain_majority(self):
        beam = [
            (hypothesis_with_score(0.5), text_answers(a)) for a in ["5", "5", "3", "7", "5"]
        ]
        result = majority_vote(beam)
        assert result.winner == "5"
        assert result.tally == {"5": 3.0, "3": 1.0, "7": 1.0}
        assert not result.tie_broken_by_score

    def test_tie_breaks_by_chain_score(self):
        beam = [
            (hypothesis_with_score(0.2), text_answers("5")),
            (hypothesis_with_score(0.6), text_answers("3")),
        ]
        result = majority_vote(beam)
        assert result.winner == "3"
        assert result.tie_broken_by_score

    def test_all_empty_sets_has_no_winner(self):
        beam = [(hypothesis_with_score(0.5), text_answers(None))] * 3
        result = majority_vote(beam)
        assert result.winner is None
        assert result.tally == {}

    def test_split_votes_conserve_mass(self):
        multi = AnswerSet(values=frozenset({"1", "2"}), source=AnswerSource.TEXT_EXTRACTION)
        beam = [
            (hypothesis_with_score(0.5), multi),
            (hypothesis_with_score(0.4), text_answers("1")),
            (hypothesis_with_score(0.3), text_answers(None)),
        ]
        result = majority_vote(beam)
        assert sum(result.tally.values()) == pytest.approx(2.0)  # two non-empty chains
        assert result.winner == "1"

    def test_duplicates_count_as_votes(self):
        h = hypothesis_with_score(0.5)
        beam = [(h, text_answers("9")), (h, text_answers("9")), (hypothesis_with_score(0.9), text_answers("4"))]
        assert majority_vote(beam).winner == "9"

    def test_empty_beam_rejected(self):
        with pytest.raises(ContractViolation):
            majority_vote([])


class TestSingleChain:
    def test_argmax_score_chain_wins(self):
        beam = [
            (hypothesis_with_score(0.2), text_answers("5")),
            (hypothesis_with_score(0.6), text_answers("3")),
        ]
        assert single_chain_answer(beam) == "3"

    def test_empty_answer_set_yields_none(self):
        beam = [(hypothesis_with_score(0.9), text_answers(None))]
        assert single_chain_answer(beam) is None
