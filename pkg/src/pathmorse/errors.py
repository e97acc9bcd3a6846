"""Exception vocabulary shared across the toolkit.

Every error raised on a documented failure path has a named class here, so
callers (and the CLI) can react to the failure mode rather than parse
messages.
"""


class PathmorseError(Exception):
    """Base class for all toolkit errors."""


class NonphysicalSystem(PathmorseError):
    """Kinetic energy E - V(x) is not positive at an evaluated point."""


class DegenerateMetric(PathmorseError):
    """The metric factor vanishes (E = 2V) or the metric loses rank."""


class OutOfChart(PathmorseError):
    """A point left the coordinate domain of a chart model."""


class IntegrationFailure(PathmorseError):
    """An ODE integration produced a non-finite state."""


class AntipodalEndpoints(PathmorseError):
    """Boundary-value endpoints are antipodal: a continuum of geodesics."""


class NoConvergence(PathmorseError):
    """Shooting iteration failed after all restarts."""


class Unsupported(PathmorseError):
    """Requested operation is outside the model's scope (e.g. winding > 0 on a chart)."""


class EndpointViolation(PathmorseError):
    """A variation field is nonzero at an endpoint where it must vanish."""


class GridTooCoarse(PathmorseError):
    """Too few samples for the finite-difference operator to be meaningful."""


class ConjugateEndpoints(PathmorseError):
    """Endpoints of a geodesic are conjugate; the Morse index is ill-defined."""


class SegmentCountTooSmall(PathmorseError):
    """Discretization cannot resolve the requested spectral count."""


class SegmentTooLong(PathmorseError):
    """A broken-path segment exceeds the minimizing-geodesic bound."""


class StepUnderflow(PathmorseError):
    """Backtracking could not decrease the action at any representable step."""


class Unclassified(PathmorseError):
    """A flow limit did not match any known critical geodesic.

    The partial trajectory is attached as ``trajectory`` when available.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class BudgetExhausted(PathmorseError):
    """The flow step budget ran out before convergence."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class IndexGapNotOne(PathmorseError):
    """Trajectory counting requested for a pair whose index gap is not 1."""


class UnresolvedBasin(PathmorseError):
    """Some seeds could not be classified; they are listed, not dropped."""

    def __init__(self, message, seeds=()):
        super().__init__(message)
        self.seeds = list(seeds)


class BoundaryNotSquareZero(PathmorseError):
    """Assembled boundary matrices fail d o d = 0: a counting error upstream."""


class ConfigInvalid(PathmorseError):
    """A run configuration failed validation; message names the field."""
