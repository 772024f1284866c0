"""Scripted space validation and sampling semantics."""

from __future__ import annotations

import json
import math

import pytest

from evalbeam.backends.base import StopRules, derive_rng
from evalbeam.backends.scripted import (

    ScriptedEvaluationBackend,
    ScriptedGenerationBackend,
    ScriptedSpace,
    reshape_probs,
    scripted_correctness,
    scripted_sample,
)
from evalbeam.exceptions import MissingNodeError, SpaceValidationError

from conftest import edge

class TestSpaceValidation:
    def test_probs_must_sum_to_one(self):
        with pytest.raises(SpaceValidationError):
            ScriptedSpace(root="r", nodes={"r": (edge("a", 0.5, 0.5, terminal=True),)})

    def test_leaf_must_be_terminal(self):
        with pytest.raises(SpaceValidationError):
            ScriptedSpace(root="r", nodes={"r": (edge("a", 1.0, 0.5),)})

    def test_terminal_edge_must_not_have_child(self):
        with pytest.raises(SpaceValidationError):
            ScriptedSpace(
                root="r",
                nodes={
                    "r": (edge("a", 1.0, 0.5, terminal=True, child="x"),),
                    "x": (edge("b", 1.0, 0.5, terminal=True),),
                },
            )

    def test_correctness_bounds(self):
        with pytest.raises(SpaceValidationError):
            ScriptedSpace(root="r", nodes={"r": (edge("a", 1.0, 1.5, terminal=True),)})

    def test_cycle_detected(self):
        with pytest.raises(SpaceValidationError):
            ScriptedSpace(
                root="r",
                nodes={"r": (edge("a", 1.0, 0.5, child="r"),)},
            )

    def test_unreachable_node_detected(self):
        with pytest.raises(SpaceValidationError):
            ScriptedSpace(
                root="r",
                nodes={
                    "r": (edge("a", 1.0, 0.5, terminal=True),),
                    "orphan": (edge("b", 1.0, 0.5, terminal=True),),
                },
            )

    def test_round_trip_through_json(self, two_leaf_space, tmp_path):
        path = tmp_path / "space.json"
        path.write_text(json.dumps(two_leaf_space.to_dict()), encoding="utf-8")
        loaded = ScriptedSpace.from_file(path)
        assert loaded == two_leaf_space

    def test_resolve_walks_steps(self, planted_error_space):
        assert planted_error_space.resolve([]) == "r"
        assert planted_error_space.resolve(["add the two numbers"]) == "right"
        with pytest.raises(MissingNodeError):
            planted_error_space.resolve(["nonsense"])

class TestReshape:
    def test_identity_at_temp_one(self):
        out = reshape_probs([0.7, 0.3], 1.0)
        assert out == pytest.approx([0.7, 0.3])

    def test_argmax_at_temp_zero(self):
        out = reshape_probs([0.3, 0.4, 0.3], 0.0)
        assert list(out) == [0.0, 1.0, 0.0]

    def test_argmax_tie_breaks_low_index(self):
        out = reshape_probs([0.4, 0.4, 0.2], 0.0)
        assert list(out) == [1.0, 0.0, 0.0]

    def test_low_temp_sharpens(self):
        out = reshape_probs([0.7, 0.3], 0.5)
        # p^2 normalized: 0.49 / (0.49 + 0.09)
        assert out[0] == pytest.approx(0.49 / 0.58)

class TestScriptedSample:
    def test_empirical_frequency_matches_distribution(self, two_leaf_space):
        # Monte Carlo against the stored distribution: 0.7 within +-0.01
        rng = derive_rng(0, "freq")
        steps = scripted_sample(two_leaf_space, "r", 100_000, 1.0, rng)
        freq = sum(s.text == "So the answer is 1." for s in steps) / len(steps)
        assert abs(freq - 0.7) < 0.01

    def test_gamma_zero_is_argmax(self, two_leaf_space):
        rng = derive_rng(0, "argmax")
        steps = scripted_sample(two_leaf_space, "r", 3, 0.0, rng)
        assert [s.text for s in steps] == ["So the answer is 1."] * 3

    def test_symmetric_node_logprob(self):
        space = ScriptedSpace(
            root="r",
            nodes={"r": (edge("a", 0.5, 0.5, terminal=True), edge("b", 0.5, 0.5, terminal=True))},
        )
        rng = derive_rng(1, "sym")
        steps = scripted_sample(space, "r", 20, 1.0, rng)
        for s in steps:
            assert s.token_logprobs[0] == pytest.approx(math.log(0.5))

    def test_unknown_node_raises(self, two_leaf_space):
        with pytest.raises(MissingNodeError):
            scripted_sample(two_leaf_space, "nope", 1, 1.0, derive_rng(0))

    def test_gamma_reshaped_frequencies(self, two_leaf_space):
        rng = derive_rng(3, "reshaped")
        steps = scripted_sample(two_leaf_space, "r", 100_000, 0.5, rng)
        freq = sum(s.text == "So the answer is 1." for s in steps) / len(steps)
        assert abs(freq - 0.49 / 0.58) < 0.01

    def test_terminal_flag_carried(self, planted_error_space):
        rng = derive_rng(0)
        steps = scripted_sample(planted_error_space, "r", 5, 1.0, rng)
        assert all(not s.is_terminal for s in steps)
        steps = scripted_sample(planted_error_space, "right", 2, 1.0, rng)
        assert all(s.is_terminal for s in steps)

class TestScriptedCorrectness:
    @pytest.mark.parametrize("text,expected", [("So the answer is 1.", 0.9), ("So the answer is 2.", 0.5)])
    def test_stored_value(self, two_leaf_space, text, expected):
        assert scripted_correctness(two_leaf_space, "r", text) == expected

    def test_boundary_values(self, adversarial_space):
        assert scripted_correctness(adversarial_space, "r", "s0") == 1.0
        assert scripted_correctness(adversarial_space, "r", "s1") == 0.0

    def test_unknown_edge(self, two_leaf_space):
        with pytest.raises(MissingNodeError):
            scripted_correctness(two_leaf_space, "r", "not a step")

class TestBackendWrappers:
    def test_generation_reproducible_across_instances(self, eight_chain_space):
        rules = StopRules()
        one = ScriptedGenerationBackend(eight_chain_space, seed=42)
        two = ScriptedGenerationBackend(eight_chain_space, seed=42)
        for _ in range(4):
            steps_one, _ = one.sample_steps("", 8, 1.0, rules)
            steps_two, _ = two.sample_steps("", 8, 1.0, rules)
            assert [s.text for s in steps_one] == [s.text for s in steps_two]

    def test_generation_varies_across_call_ordinals(self, eight_chain_space):
        backend = ScriptedGenerationBackend(eight_chain_space, seed=42)
        first, _ = backend.sample_steps("", 8, 1.0, StopRules())
        second, _ = backend.sample_steps("", 8, 1.0, StopRules())
        assert [s.text for s in first] != [s.text for s in second]

    def test_generation_cost_delta(self, two_leaf_space):
        backend = ScriptedGenerationBackend(two_leaf_space, seed=0)
        steps, delta = backend.sample_steps("", 5, 1.0, StopRules())
        assert len(steps) == 5
        assert delta.generated_tokens == 5
        assert delta.api_calls == 1

    def test_evaluation_lookup_and_cost(self, planted_error_space):
        backend = ScriptedEvaluationBackend(planted_error_space)
        value, delta = backend.correctness("add the two numbers")
        assert value == 0.95
        assert delta.eval_input_tokens == 1
        assert delta.eval_generated_tokens == 1
        value, delta = backend.correctness("add the two numbers\nSo the answer is 8.")
        assert value == 0.9
        assert delta.eval_input_tokens == 2
