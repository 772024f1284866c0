"""Restricted program execution with hard timeouts.

Each program runs in a fresh forked worker process with a curated builtin
set and the helpers reasoning programs lean on without importing: math,
date arithmetic, and a single-equation symbolic solver.  The worker is
killed outright when it overruns its deadline, so runaway programs cannot
wedge the runner.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass

import sympy
from dateutil.relativedelta import relativedelta
from datetime import date, datetime, timedelta

MAX_TIMEOUT_MS = 30_000
_KILL_GRACE_S = 0.2

_SAFE_BUILTIN_NAMES = (
    "abs", "all", "any", "bool", "dict", "divmod", "enumerate", "filter",
    "float", "frozenset", "int", "isinstance", "len", "list", "map", "max",
    "min", "pow", "range", "repr", "reversed", "round", "set", "sorted",
    "str", "sum", "tuple", "zip",
)

# strftime and friends lazily import these through the caller's builtins;
# nothing here touches the filesystem or the network
_IMPORT_ALLOWLIST = frozenset({"math", "time", "datetime", "calendar", "_strptime"})


def _limited_import(name, globals=None, locals=None, fromlist=(), level=0):
    if name.partition(".")[0] in _IMPORT_ALLOWLIST:
        return __import__(name, globals, locals, fromlist, level)
    raise ImportError(f"import of {name!r} is not allowed")


@dataclass(frozen=True)
class ExecResult:
    status: str  # "ok" | "error" | "timeout"
    result: str | None = None
    diagnostic: str | None = None


def solve_it(equation, variable):
    """Solve one equation for one variable; returns a {variable: value} map."""
    solutions = sympy.solve(equation, variable, dict=True)
    if not solutions:
        raise ValueError(f"no solution for {variable}")
    return solutions[0]


def build_namespace() -> dict:
    """A fresh, isolated global namespace for one program."""
    import builtins

    safe_builtins = {name: getattr(builtins, name) for name in _SAFE_BUILTIN_NAMES}
    safe_builtins["True"] = True
    safe_builtins["False"] = False
    safe_builtins["None"] = None
    safe_builtins["__import__"] = _limited_import
    return {
        "__builtins__": safe_builtins,
        "math": math,
        "datetime": datetime,
        "date": date,
        "timedelta": timedelta,
        "relativedelta": relativedelta,
        "Symbol": sympy.Symbol,
        "symbols": sympy.symbols,
        "Eq": sympy.Eq,
        "Rational": sympy.Rational,
        "sqrt": sympy.sqrt,
        "solve_it": solve_it,
    }


def stringify_value(value) -> str:
    """Canonical decimal text for numbers so 8.0 reads back as "8"."""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return _format_decimal(value)
    if isinstance(value, sympy.Basic):
        if value.is_number:
            if value.is_Integer:
                return str(int(value))
            return _format_decimal(float(value))
        return str(value)
    return str(value)


def _format_decimal(x: float) -> str:
    if not math.isfinite(x):
        return str(x)
    return f"{x:.12g}"


def _worker(program: str, entry_point: str, conn) -> None:
    try:
        namespace = build_namespace()
        exec(compile(program, "<program>", "exec"), namespace)
        fn = namespace.get(entry_point)
        if not callable(fn):
            raise NameError(f"entry point {entry_point!r} is not defined by the program")
        value = fn()
        conn.send(("ok", stringify_value(value), None))
    except BaseException as exc:  # report, never crash the pipe silently
        conn.send(("error", None, f"{type(exc).__name__}: {exc}"))
    finally:
        conn.close()


def run_program(program: str, timeout_ms: int, entry_point: str = "solution") -> ExecResult:
    """Run one program in a throwaway worker process.

    A fresh process per request gives full namespace isolation between
    requests and lets the deadline be enforced by killing the worker.
    """
    if not program:
        return ExecResult(status="error", diagnostic="program must be non-empty")
    if not (0 < timeout_ms <= MAX_TIMEOUT_MS):
        return ExecResult(
            status="error",
            diagnostic=f"timeout_ms must be in (0, {MAX_TIMEOUT_MS}], got {timeout_ms}",
        )
    ctx = multiprocessing.get_context("fork")
    parent_conn, child_conn = ctx.Pipe(duplex=False)
    proc = ctx.Process(target=_worker, args=(program, entry_point, child_conn), daemon=True)
    proc.start()
    child_conn.close()
    proc.join(timeout_ms / 1000.0)
    if proc.is_alive():
        proc.terminate()
        proc.join(_KILL_GRACE_S)
        if proc.is_alive():
            proc.kill()
            proc.join()
        parent_conn.close()
        return ExecResult(status="timeout", diagnostic=f"exceeded {timeout_ms} ms")
    try:
        if parent_conn.poll():
            status, result, diagnostic = parent_conn.recv()
            return ExecResult(status=status, result=result, diagnostic=diagnostic)
    except (EOFError, OSError):
        pass
    finally:
        parent_conn.close()
    return ExecResult(status="error", diagnostic=f"worker exited without result (code {proc.exitcode})")
