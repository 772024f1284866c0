"""Client side of the program-executor bridge.

Program-aided chains are answered by running them.  The bridge speaks a
line protocol to a long-lived runner subprocess: one JSON request per
line on stdin, one JSON response per line on stdout.  Program failures
(exceptions, timeouts) come back as structured responses; only transport
problems raise.
"""

from __future__ import annotations

import json
import subprocess
import sys
import threading
import uuid
from dataclasses import dataclass
from typing import Callable, Protocol, runtime_checkable

from .exceptions import ExecutorError

__all__ = ["ExecOutcome", "ProgramExecutor", "SubprocessExecutor", "StubExecutor", "DEFAULT_RUNNER_CMD"]

DEFAULT_RUNNER_CMD = (sys.executable, "-m", "execrunner")
DEFAULT_TIMEOUT_MS = 5000


@dataclass(frozen=True, slots=True)
class ExecOutcome:
    """Result of one program execution."""

    status: str  # "ok" | "error" | "timeout"
    result: str | None = None
    diagnostic: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@runtime_checkable
class ProgramExecutor(Protocol):
    def run(self, program: str, timeout_ms: int = DEFAULT_TIMEOUT_MS, entry_point: str = "solution") -> ExecOutcome: ...


class SubprocessExecutor:
    """Executes programs through a pooled runner subprocess.

    The runner is restart-friendly: if it dies the next request respawns
    it.  Requests are serialized per executor instance; pool several
    instances for parallelism.
    """

    def __init__(self, command: tuple[str, ...] = DEFAULT_RUNNER_CMD):
        self.command = command
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    def _ensure_process(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    list(self.command),
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.DEVNULL,
                    text=True,
                )
            except OSError as exc:
                raise ExecutorError(f"could not start runner {self.command}: {exc}") from exc
        return self._proc

    def run(
        self, program: str, timeout_ms: int = DEFAULT_TIMEOUT_MS, entry_point: str = "solution"
    ) -> ExecOutcome:
        request = {
            "id": uuid.uuid4().hex,
            "program": program,
            "timeout_ms": timeout_ms,
            "entry_point": entry_point,
        }
        with self._lock:
            proc = self._ensure_process()
            try:
                assert proc.stdin is not None and proc.stdout is not None
                proc.stdin.write(json.dumps(request) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise ExecutorError(f"runner transport failed: {exc}") from exc
        if not line:
            raise ExecutorError("runner closed its stdout without responding")
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExecutorError(f"runner sent malformed JSON: {line!r}") from exc
        if payload.get("id") != request["id"]:
            raise ExecutorError(f"runner response id mismatch: {payload.get('id')!r}")
        return ExecOutcome(
            status=payload.get("status", "error"),
            result=payload.get("result"),
            diagnostic=payload.get("diagnostic"),
        )

    def close(self) -> None:
        with self._lock:
            if self._proc is not None and self._proc.poll() is None:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()
                self._proc.wait(timeout=5)
            self._proc = None

    def __enter__(self) -> "SubprocessExecutor":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class StubExecutor:
    """In-memory executor for tests: maps program text to an outcome."""

    def __init__(self, handler: Callable[[str], ExecOutcome] | dict[str, str] | None = None):
        self._handler = handler
        self.calls: list[str] = []

    def run(
        self, program: str, timeout_ms: int = DEFAULT_TIMEOUT_MS, entry_point: str = "solution"
    ) -> ExecOutcome:
        self.calls.append(program)
        if self._handler is None:
            return ExecOutcome(status="error", diagnostic="no handler configured")
        if isinstance(self._handler, dict):
            if program in self._handler:
                return ExecOutcome(status="ok", result=self._handler[program])
            return ExecOutcome(status="error", diagnostic="program not stubbed")
        return self._handler(program)
