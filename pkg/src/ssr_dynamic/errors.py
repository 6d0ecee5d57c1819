"""Exception types shared across the package."""


class SSRError(Exception):
    """Base class for all package errors."""


class ValidationError(SSRError, ValueError):
    """Invalid input: bad design parameters, malformed config, out-of-range query."""


class InfeasibleTargetError(ValidationError):
    """A calibration target cannot be reached inside the allowed sample-size range."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class NumericalError(SSRError, RuntimeError):
    """An iterative routine failed to converge."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []
