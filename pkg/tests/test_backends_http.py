"""HTTP backend behavior against a local fake completions server."""

from __future__ import annotations

import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from evalbeam.backends.base import StopRules
from evalbeam.backends.http import (
    OPTION_PROB_FLOOR,
    HttpEvaluationBackend,
    HttpGenerationBackend,
    ResponseCache,
    ServerConfig,
)
from evalbeam.exceptions import BackendError, CapabilityError


class FakeCompletionsServer:
    """Serves canned completion responses and records requests."""

    def __init__(self):
        self.requests: list[dict] = []
        self.responses: list[tuple[int, dict | str]] = []
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length))
                with outer._lock:
                    outer.requests.append(payload)
                    status, body = outer.responses.pop(0) if outer.responses else (200, outer.default(payload))
                data = json.dumps(body).encode() if isinstance(body, dict) else str(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = HTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @staticmethod
    def default(payload: dict) -> dict:
        n = payload.get("n", 1)
        return {
            "choices": [
                {
                    "text": f"step {i}",
                    "logprobs": {"tokens": ["step", f" {i}"], "token_logprobs": [-0.1, -0.2]},
                }
                for i in range(n)
            ],
            "usage": {"prompt_tokens": 12, "completion_tokens": 2 * n},
        }

    def queue(self, status: int, body: dict | str) -> None:
        self.responses.append((status, body))

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1/completions"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def fake_server():
    server = FakeCompletionsServer()
    yield server
    server.close()


def make_config(url: str, **overrides) -> ServerConfig:
    defaults = dict(base_url=url, model="test-model", max_retries=2, backoff_base_s=0.01)
    defaults.update(overrides)
    return ServerConfig(**defaults)


class TestGeneration:
    def test_logprob_field_mapping(self, fake_server):
        backend = HttpGenerationBackend(make_config(fake_server.url), terminal_detector=lambda s: False)
        steps, delta = backend.sample_steps("prompt", 1, 0.7, StopRules())
        assert steps[0].token_logprobs == (-0.1, -0.2)
        assert delta.generated_tokens == 2
        assert delta.api_calls == 1

    def test_request_shape(self, fake_server):
        backend = HttpGenerationBackend(make_config(fake_server.url), terminal_detector=lambda s: False)
        backend.sample_steps("the prompt", 3, 0.5, StopRules(stop_strings=("\n",), max_tokens_per_step=64))
        request = fake_server.requests[-1]
        assert request["model"] == "test-model"
        assert request["prompt"] == "the prompt"
        assert request["temperature"] == 0.5
        assert request["n"] == 3
        assert request["stop"] == ["\n"]
        assert request["max_tokens"] == 64
        assert request["logprobs"] == 1

    def test_n_completions_returned(self, fake_server):
        backend = HttpGenerationBackend(make_config(fake_server.url), terminal_detector=lambda s: False)
        steps, delta = backend.sample_steps("p", 3, 0.7, StopRules())
        assert len(steps) == 3
        assert delta.api_calls == 1

    def test_missing_logprobs_is_capability_error(self, fake_server):
        fake_server.queue(200, {"choices": [{"text": "step"}], "usage": {}})
        backend = HttpGenerationBackend(make_config(fake_server.url), terminal_detector=lambda s: False)
        with pytest.raises(CapabilityError):
            backend.sample_steps("p", 1, 0.7, StopRules())

    def test_retry_then_success(self, fake_server):
        fake_server.queue(500, "boom")
        backend = HttpGenerationBackend(make_config(fake_server.url), terminal_detector=lambda s: False)
        steps, _ = backend.sample_steps("p", 1, 0.7, StopRules())
        assert len(steps) == 1
        assert len(fake_server.requests) == 2

    def test_non_retryable_error_carries_status_and_body(self, fake_server):
        fake_server.queue(400, "bad request body")
        backend = HttpGenerationBackend(make_config(fake_server.url), terminal_detector=lambda s: False)
        with pytest.raises(BackendError) as excinfo:
            backend.sample_steps("p", 1, 0.7, StopRules())
        assert excinfo.value.status == 400
        assert "bad request" in (excinfo.value.body or "")
        assert len(fake_server.requests) == 1

    def test_exhausted_retries_raise(self, fake_server):
        for _ in range(3):
            fake_server.queue(503, "overloaded")
        backend = HttpGenerationBackend(make_config(fake_server.url), terminal_detector=lambda s: False)
        with pytest.raises(BackendError):
            backend.sample_steps("p", 1, 0.7, StopRules())

    def test_terminal_detector_applied(self, fake_server):
        fake_server.queue(
            200,
            {
                "choices": [
                    {"text": "So the answer is 4.", "logprobs": {"token_logprobs": [-0.5]}}
                ],
                "usage": {},
            },
        )
        backend = HttpGenerationBackend(
            make_config(fake_server.url), terminal_detector=lambda s: s.startswith("So the answer")
        )
        steps, _ = backend.sample_steps("p", 1, 0.7, StopRules())
        assert steps[0].is_terminal


class TestEvaluation:
    def _eval_response(self, top: dict, prompt_tokens=25) -> dict:
        return {
            "choices": [{"text": "A", "logprobs": {"top_logprobs": [top]}}],
            "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": 1},
        }

    def test_direct_readoff(self, fake_server):
        fake_server.queue(200, self._eval_response({"A": math.log(0.7), "B": math.log(0.3)}))
        backend = HttpEvaluationBackend(make_config(fake_server.url))
        value, delta = backend.correctness("eval prompt")
        assert value == pytest.approx(0.7)
        assert delta.eval_input_tokens == 25
        assert delta.eval_generated_tokens == 1

    def test_floor_when_option_absent(self, fake_server):
        fake_server.queue(200, self._eval_response({"B": math.log(0.9), "C": math.log(0.05)}))
        backend = HttpEvaluationBackend(make_config(fake_server.url))
        value, _ = backend.correctness("eval prompt")
        assert value == OPTION_PROB_FLOOR

    def test_certainty(self, fake_server):
        fake_server.queue(200, self._eval_response({"A": 0.0}))
        backend = HttpEvaluationBackend(make_config(fake_server.url))
        value, _ = backend.correctness("eval prompt")
        assert value == 1.0

    def test_whitespace_and_case_normalization(self, fake_server):
        fake_server.queue(200, self._eval_response({" a": math.log(0.4)}))
        backend = HttpEvaluationBackend(make_config(fake_server.url))
        value, _ = backend.correctness("eval prompt")
        assert value == pytest.approx(0.4)

    def test_single_token_request(self, fake_server):
        fake_server.queue(200, self._eval_response({"A": math.log(0.5)}))
        backend = HttpEvaluationBackend(make_config(fake_server.url))
        backend.correctness("eval prompt")
        request = fake_server.requests[-1]
        assert request["max_tokens"] == 1
        assert request["temperature"] == 0.0

    def test_option_renormalization_variant(self, fake_server):
        fake_server.queue(200, self._eval_response({"A": math.log(0.6), "B": math.log(0.2)}))
        backend = HttpEvaluationBackend(make_config(fake_server.url, normalize_options=True))
        value, _ = backend.correctness("eval prompt")
        assert value == pytest.approx(0.6 / 0.8)

    def test_missing_top_logprobs_is_capability_error(self, fake_server):
        fake_server.queue(200, {"choices": [{"text": "A"}], "usage": {}})
        backend = HttpEvaluationBackend(make_config(fake_server.url))
        with pytest.raises(CapabilityError):
            backend.correctness("eval prompt")


class TestResponseCache:
    def test_cache_replays_identical_call_by_slot(self, fake_server, tmp_path):
        cache = ResponseCache(tmp_path / "cache.json")
        backend = HttpGenerationBackend(
            make_config(fake_server.url), terminal_detector=lambda s: False, cache=cache
        )
        backend.sample_steps("p", 2, 0.7, StopRules())
        backend.sample_steps("p", 2, 0.7, StopRules())
        assert len(fake_server.requests) == 2  # distinct seed slots both hit the server

        fresh = HttpGenerationBackend(
            make_config(fake_server.url), terminal_detector=lambda s: False, cache=ResponseCache(tmp_path / "cache.json")
        )
        steps, _ = fresh.sample_steps("p", 2, 0.7, StopRules())
        assert len(fake_server.requests) == 2  # served from cache
        assert len(steps) == 2
