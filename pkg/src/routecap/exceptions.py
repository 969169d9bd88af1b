"""Exception hierarchy shared across the package."""


class RoutecapError(Exception):
    """Base class for every error raised by routecap."""


class DimensionError(RoutecapError, ValueError):
    """Operand shapes or widths do not agree."""


class ContractError(RoutecapError, ValueError):
    """A precondition of an operation was violated."""


class ValidationError(RoutecapError, ValueError):
    """Input data does not match its declared format or manifest."""


class DataParseError(ValidationError):
    """A dataset or checkpoint file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientDataError(RoutecapError, ValueError):
    """Too few observations for the requested statistic."""


class NumericalError(RoutecapError, FloatingPointError):
    """A non-finite value appeared where a finite one is required."""


class CheckpointError(RoutecapError, ValueError):
    """A checkpoint file is truncated, corrupt, or from an incompatible version."""
