"""HTTP backends for OpenAI-completions-compatible servers.

The decoder needs per-token log-probabilities from the generation model
and the top-token distribution at the evaluation position, so only
completion-style endpoints that report ``logprobs`` are supported.
Chat-style APIs without token likelihoods cannot drive the algorithm.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import requests

from ..core import CostLedger, ReasoningStep
from ..exceptions import BackendError, CapabilityError
from .base import StopRules

__all__ = ["ServerConfig", "ResponseCache", "HttpGenerationBackend", "HttpEvaluationBackend"]

logger = logging.getLogger(__name__)

OPTION_PROB_FLOOR = 1e-4
_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


@dataclass(frozen=True, slots=True)
class ServerConfig:
    """Connection settings for a completions server."""

    base_url: str
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_base_s: float = 0.5
    backoff_cap_s: float = 8.0
    logprobs_top_k: int = 5
    normalize_options: bool = False

    @property
    def completions_url(self) -> str:
        base = self.base_url.rstrip("/")
        return base if base.endswith("/completions") else base + "/completions"

    def headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    @classmethod
    def from_file(cls, path: str | Path) -> "ServerConfig":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(**payload)


class ResponseCache:
    """Write-through response cache keyed by the full request identity.

    Off by default; enable it to replay runs against paid APIs without
    re-spending tokens.  The seed slot distinguishes repeated identical
    requests that are meant to draw fresh samples.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                self._entries = json.load(fh)

    @staticmethod
    def key(endpoint: str, payload: dict, seed_slot: int) -> str:
        blob = json.dumps({"endpoint": endpoint, "payload": payload, "slot": seed_slot}, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def get(self, key: str) -> dict | None:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, response: dict) -> None:
        with self._lock:
            self._entries[key] = response
            if self.path is not None:
                tmp = self.path.with_suffix(".tmp")
                with open(tmp, "w", encoding="utf-8") as fh:
                    json.dump(self._entries, fh)
                tmp.replace(self.path)


class _HttpBackendBase:
    def __init__(self, server: ServerConfig, cache: ResponseCache | None = None):
        self.server = server
        self.cache = cache
        self._slots: dict[str, int] = {}
        self._lock = threading.Lock()

    def _seed_slot(self, payload_key: str) -> int:
        with self._lock:
            slot = self._slots.get(payload_key, 0)
            self._slots[payload_key] = slot + 1
            return slot

    def _post(self, payload: dict) -> dict:
        """Issue the request, retrying transient failures with capped
        exponential backoff."""
        seed_slot = 0
        cache_key = None
        if self.cache is not None:
            blob = json.dumps(payload, sort_keys=True)
            seed_slot = self._seed_slot(blob)
            cache_key = ResponseCache.key(self.server.completions_url, payload, seed_slot)
            cached = self.cache.get(cache_key)
            if cached is not None:
                return cached

        last_error: Exception | None = None
        for attempt in range(self.server.max_retries + 1):
            if attempt > 0:
                delay = min(self.server.backoff_base_s * 2 ** (attempt - 1), self.server.backoff_cap_s)
                logger.warning("retrying completion request in %.2fs (attempt %d)", delay, attempt + 1)
                time.sleep(delay)
            try:
                resp = requests.post(
                    self.server.completions_url,
                    headers=self.server.headers(),
                    json=payload,
                    timeout=self.server.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 200:
                body = resp.json()
                if self.cache is not None and cache_key is not None:
                    self.cache.put(cache_key, body)
                return body
            if resp.status_code in _RETRYABLE_STATUS:
                last_error = BackendError(
                    f"server returned {resp.status_code}", status=resp.status_code, body=resp.text
                )
                continue
            raise BackendError(
                f"server returned {resp.status_code}", status=resp.status_code, body=resp.text
            )
        if isinstance(last_error, BackendError):
            raise last_error
        raise BackendError(f"request failed after retries: {last_error}")


class HttpGenerationBackend(_HttpBackendBase):
    """Samples candidate steps over an OpenAI-compatible completions API."""

    def __init__(
        self,
        server: ServerConfig,
        terminal_detector: Callable[[str], bool],
        cache: ResponseCache | None = None,
    ):
        super().__init__(server, cache)
        self.terminal_detector = terminal_detector

    def sample_steps(
        self, context: str, n: int, gen_temp: float, stop_rules: StopRules
    ) -> tuple[list[ReasoningStep], CostLedger]:
        payload = {
            "model": self.server.model,
            "prompt": context,
            "temperature": gen_temp,
            "n": n,
            "stop": list(stop_rules.stop_strings),
            "max_tokens": stop_rules.max_tokens_per_step,
            "logprobs": 1,
        }
        body = self._post(payload)
        choices = body.get("choices", [])
        if len(choices) != n:
            raise BackendError(f"requested {n} completions, server returned {len(choices)}")
        steps = []
        generated = 0
        for choice in choices:
            logprobs = choice.get("logprobs")
            if not logprobs or logprobs.get("token_logprobs") is None:
                raise CapabilityError(
                    "server omitted token logprobs; step probabilities and correctness "
                    "confidences require token likelihoods, so this backend cannot be used"
                )
            token_logprobs = tuple(
                min(float(lp), 0.0) for lp in logprobs["token_logprobs"] if lp is not None
            )
            text = choice.get("text", "").strip("\n")
            if not text or not token_logprobs:
                raise BackendError("server returned an empty completion", body=json.dumps(choice))
            generated += len(token_logprobs)
            steps.append(
                ReasoningStep(
                    text=text,
                    token_logprobs=token_logprobs,
                    is_terminal=self.terminal_detector(text),
                )
            )
        return steps, CostLedger(generated_tokens=generated, api_calls=1)


class HttpEvaluationBackend(_HttpBackendBase):
    """Reads the correct-option token probability at the evaluation position.

    The prompt must end exactly where the option letter is the next token.
    If the server's truncated top-k report does not include the option
    token, a small floor probability stands in for it so one truncated
    report cannot hard-zero an entire chain.
    """

    def __init__(
        self,
        server: ServerConfig,
        option_label: str = "A",
        alternative_label: str = "B",
        cache: ResponseCache | None = None,
    ):
        super().__init__(server, cache)
        self.option_label = option_label
        self.alternative_label = alternative_label

    @staticmethod
    def _match(token: str, label: str) -> bool:
        return token.strip().upper() == label.upper()

    def correctness(self, context: str) -> tuple[float, CostLedger]:
        payload = {
            "model": self.server.model,
            "prompt": context,
            "temperature": 0.0,
            "n": 1,
            "stop": [],
            "max_tokens": 1,
            "logprobs": self.server.logprobs_top_k,
        }
        body = self._post(payload)
        choices = body.get("choices", [])
        if not choices:
            raise BackendError("server returned no choices", body=json.dumps(body))
        logprobs = choices[0].get("logprobs")
        top = None
        if logprobs:
            tops = logprobs.get("top_logprobs") or []
            top = tops[0] if tops else None
        if top is None:
            raise CapabilityError(
                "server omitted top-token logprobs; the correctness confidence is the "
                "option token's probability and requires token likelihoods"
            )
        prob = None
        alt_prob = None
        for token, lp in top.items():
            if self._match(token, self.option_label) and prob is None:
                prob = min(float(lp), 0.0)
            elif self._match(token, self.alternative_label) and alt_prob is None:
                alt_prob = min(float(lp), 0.0)
        value = math.exp(prob) if prob is not None else OPTION_PROB_FLOOR
        if self.server.normalize_options and prob is not None and alt_prob is not None:
            value = math.exp(prob) / (math.exp(prob) + math.exp(alt_prob))
        usage = body.get("usage", {})
        prompt_tokens = int(usage.get("prompt_tokens", len(context.split())))
        delta = CostLedger(eval_input_tokens=prompt_tokens, eval_generated_tokens=1, api_calls=1)
        return min(max(value, 0.0), 1.0), delta
