"""Exception types shared across the package."""


class ProcplanError(Exception):
    """Base class for all package errors."""


class ValidationError(ProcplanError, ValueError):
    """An input violates a documented precondition or invariant."""


class CoverageError(ProcplanError, ValueError):
    """A description set does not cover every action id exactly once."""


class DuplicateEntryError(ProcplanError, ValueError):
    """A file or spec contains a duplicate record for the same key."""


class StageError(ProcplanError, RuntimeError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
