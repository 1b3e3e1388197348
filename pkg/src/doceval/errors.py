"""Exception hierarchy shared by loaders, the simulator and the CLI."""

from __future__ import annotations


class DocEvalError(Exception):
    """Base class for input and configuration errors (CLI exit code 2)."""


class ParseError(DocEvalError):
    """Malformed file syntax."""


class SchemaError(DocEvalError):
    """Unknown or unsupported schema version."""


class ValidationError(DocEvalError):
    """A named data-model invariant does not hold."""

    def __init__(self, invariant: str, message: str, object_id: str | None = None):
        self.invariant = invariant
        self.object_id = object_id
        where = f" [object {object_id}]" if object_id is not None else ""
        super().__init__(f"{invariant}{where}: {message}")


class EmptyTrajectory(DocEvalError):
    pass


class PlacementError(DocEvalError):
    """Rejection sampling could not place every object in the region."""


class ConfigError(DocEvalError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class InvariantViolation(RuntimeError):
    """Internal consistency check failed. Always a bug (CLI exit code 3)."""
