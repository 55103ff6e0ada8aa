"""Exception hierarchy shared across the toolkit."""


class EpisdeError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(EpisdeError):
    """Array dimensions are inconsistent with the declared system sizes."""


class NotPositiveDefinite(EpisdeError):
    """Covariance matrix has a non-positive Cholesky pivot."""


class UnknownBenchmark(EpisdeError):
    """Requested name is not in the benchmark catalog."""


class NonFiniteState(EpisdeError):
    """A state component became NaN or infinite during integration."""

    def __init__(self, path_index, time_index, message=None):
        self.path_index = path_index
        self.time_index = time_index
        super().__init__(
            message
            or f"non-finite state on path {path_index} at time index {time_index}"
        )


class MilsteinUnavailable(EpisdeError):
    """Milstein scheme requested but no diffusion gradient is registered."""


class InsufficientPaths(EpisdeError):
    """Statistic requires more paths than the ensemble provides."""


class DegenerateVariance(EpisdeError):
    """Statistic is undefined because a required variance is zero."""


class UnsupportedDimension(EpisdeError):
    """Operation only supports scalar (n=1) state."""


class ZeroInitialState(EpisdeError):
    """Growth-rate classification needs a nonzero initial state."""


class HorizonMismatch(EpisdeError):
    """Constraint horizon extends beyond the ensemble time grid."""


class UndefinedLaw(EpisdeError):
    """Distributional answer requested where the law is undefined (x0 = 0)."""
