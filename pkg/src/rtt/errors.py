"""Exception hierarchy shared across the package."""


class RttError(Exception):
    """Base class for all library errors."""


class InvalidArgument(RttError, ValueError):
    """An argument is outside the documented domain of an operation."""


class MomentUndefined(RttError):
    """A requested order-statistic moment does not exist for this shape."""


class OutOfSupport(RttError):
    """A point lies outside the support of the requested distribution."""


class SampleTooSmall(RttError):
    """The sample cannot accommodate the requested tail block size."""


class DegenerateSample(RttError):
    """The middle observations are constant; the statistic is undefined."""


class TableFormatError(RttError):
    """A serialized test table failed to parse or validate."""


class ConfigurationError(RttError):
    """Inconsistent configuration (empty grids, non-nested table sets, ...)."""


class CalibrationError(RttError):
    """No candidate switching constants satisfied the size requirement."""


class NonconvergenceError(RttError):
    """The least-favorable-distribution iteration hit its cap with violations."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst or []


class IntervalNotFound(RttError):
    """Test inversion rejected every candidate value on the widened grid."""


class LinearAlgebraError(RttError):
    """A required matrix factorization failed (rank deficiency, singularity)."""
