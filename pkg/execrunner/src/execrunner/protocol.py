"""Line protocol: one JSON request in, exactly one JSON response out.

Every request line produces a response line with the matching id, even
when the request itself is malformed; the runner exits 0 when its stdin
closes.
"""

from __future__ import annotations

import json
import sys
from typing import IO

from .sandbox import MAX_TIMEOUT_MS, run_program

DEFAULT_ENTRY_POINT = "solution"
DEFAULT_TIMEOUT_MS = 5_000


def handle_request(payload: dict) -> dict:
    request_id = payload.get("id")
    program = payload.get("program")
    entry_point = payload.get("entry_point") or DEFAULT_ENTRY_POINT
    timeout_ms = payload.get("timeout_ms", DEFAULT_TIMEOUT_MS)
    if not isinstance(program, str) or not program:
        return {
            "id": request_id,
            "status": "error",
            "result": None,
            "diagnostic": "request must carry a non-empty 'program' string",
        }
    if not isinstance(timeout_ms, int):
        return {
            "id": request_id,
            "status": "error",
            "result": None,
            "diagnostic": f"timeout_ms must be an integer <= {MAX_TIMEOUT_MS}",
        }
    outcome = run_program(program, timeout_ms, entry_point)
    return {
        "id": request_id,
        "status": outcome.status,
        "result": outcome.result,
        "diagnostic": outcome.diagnostic,
    }


def handle_line(line: str) -> dict:
    try:
        payload = json.loads(line)
        if not isinstance(payload, dict):
            raise ValueError("request must be a JSON object")
    except ValueError as exc:
        return {"id": None, "status": "error", "result": None, "diagnostic": f"bad request: {exc}"}
    return handle_request(payload)


def serve(stdin: IO[str], stdout: IO[str]) -> int:
    for line in stdin:
        if not line.strip():
            continue
        response = handle_line(line)
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()
    return 0


def main() -> int:
    return serve(sys.stdin, sys.stdout)


if __name__ == "__main__":
    sys.exit(main())
