"""Exception types shared across the package."""


class GcdNetError(Exception):
    """Base class for all package errors."""


class ShapeError(GcdNetError, ValueError):
    """Operands have incompatible dimensions."""


class ConfigError(GcdNetError, ValueError):
    """A configuration value or data precondition is invalid."""


class GraphFormatError(GcdNetError, ValueError):
    """A graph file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GraphValidationError(GcdNetError, ValueError):
    """Parsed graph content violates a structural invariant."""


class CheckpointError(GcdNetError, ValueError):
    """A checkpoint is unreadable or incompatible with the graph."""
