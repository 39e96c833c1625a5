"""Exception types raised across the package."""


class SddeError(Exception):
    """Base class for all package errors."""


class OutOfDomain(SddeError, ValueError):
    """A time argument lies outside the interval a function is defined on."""


class NotInValpha(SddeError, ValueError):
    """A history segment violates the derivative bound of the set V_alpha."""


class LagOutOfRange(SddeError, ValueError):
    """A constant lag lies outside [0, h]."""


class DimensionMismatch(SddeError, ValueError):
    """State dimensions of two objects do not agree."""


class KernelDomain(SddeError, ValueError):
    """The convolution kernel is not defined on the window [t - h, t]."""


class RhoOverflow(SddeError, RuntimeError):
    """The contraction condition needs a weight larger than the configured cap."""


class NoConvergence(SddeError, RuntimeError):
    """Picard iteration hit its cap without contracting."""


class StageInconsistency(SddeError, RuntimeError):
    """Two continuation stages disagree on their common interval."""


class ParseError(SddeError, ValueError):
    """Malformed problem file. Carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(SddeError, ValueError):
    """A syntactically valid problem file violates a semantic invariant."""


class DelayOutOfRange(SddeError, ValueError):
    """A state-dependent delay functional returned a value outside [-h, 0]."""
