"""Sandboxed executor for program-style reasoning chains."""

from .sandbox import ExecResult, build_namespace, run_program, solve_it, stringify_value
from .protocol import handle_line, handle_request, serve

__version__ = "0.1.0"
