"""Exception types shared across the package."""

from __future__ import annotations


class ContractViolation(ValueError):
    """An operation was called with arguments that break its preconditions."""


class MissingNodeError(KeyError):
    """A scripted-space lookup referenced a node or edge that does not exist."""


class SpaceValidationError(ValueError):
    """A scripted space file violates its structural invariants."""


class BackendError(RuntimeError):
    """A model backend failed in a way that retries cannot fix.

    ``status`` and ``body`` carry the HTTP response when the failure came
    from a server.
    """

    def __init__(self, message: str, status: int | None = None, body: str | None = None):
        super().__init__(message)
        self.status = status
        self.body = body


class CapabilityError(BackendError):
    """The backend cannot report token log-probabilities.

    Step probabilities and correctness confidences are both derived from
    token likelihoods, so a server that does not expose them cannot drive
    the decoder.
    """


class ExpandError(RuntimeError):
    """A backend failure during beam expansion, tagged with its origin.

    ``parent`` is the beam slot being expanded and ``rollout`` the sample
    index within that slot (-1 when the failure happened before sampling).
    """

    def __init__(self, message: str, parent: int, rollout: int, cause: Exception | None = None):
        super().__init__(f"{message} (parent={parent}, rollout={rollout})")
        self.parent = parent
        self.rollout = rollout
        self.cause = cause


class DecodeAborted(RuntimeError):
    """A decode run failed after retries; the partial trace is preserved."""

    def __init__(self, message: str, trace: tuple[dict, ...], cause: Exception | None = None):
        super().__init__(message)
        self.trace = trace
        self.cause = cause


class EnumerationLimitError(RuntimeError):
    """A scripted space is too large for exact enumeration."""


class EmptyDatasetError(ValueError):
    """A dataset file contained no valid instances."""


class ExecutorError(RuntimeError):
    """The executor bridge itself failed (transport, not the user program)."""
