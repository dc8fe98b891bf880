"""Exception types shared across the package."""


class SpxError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SpxError, ValueError):
    pass


class DimensionMismatchError(InvalidArgumentError):
    pass


class ConfigurationError(SpxError, ValueError):
    pass


class UnsupportedModeError(SpxError, TypeError):
    pass


class SolverError(SpxError, RuntimeError):
    """A solver failed; ``iterate`` holds the last iterate when available."""

    def __init__(self, message, iterate=None, report=None):
        super().__init__(message)
        self.iterate = iterate
        self.report = report


class DivergenceError(SolverError):
    pass


class ConvergenceError(SolverError):
    pass
