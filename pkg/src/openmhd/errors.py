"""Exception hierarchy shared by all solver modules."""


class OpenMHDError(Exception):
    """Base class for every error raised by this package."""


class AmbiguousInflow(OpenMHDError):
    """A boundary face has inward velocity weaker than the inflow threshold."""


class DisconnectedInflow(OpenMHDError):
    """Inflow faces do not form one contiguous segment of the boundary."""


class EmptyTrajectory(OpenMHDError):
    """A space-time norm was requested for an empty trajectory."""


class VelocityNotInterpolable(OpenMHDError):
    """Characteristic backtracking asked for the velocity outside its window."""


class CharacteristicEntersThroughNonInflow(OpenMHDError):
    """A backward characteristic left the domain through a face with no
    prescribed boundary density; the velocity and the face tags disagree."""


class NonPositiveData(OpenMHDError):
    """Initial or boundary density/temperature data is not strictly positive."""


class InflowSpeedBelowThreshold(OpenMHDError):
    """The inflow faces do not satisfy -u_B.n >= c > 0."""


class LinearSolveDiverged(OpenMHDError):
    """The sparse linear solver failed to reach the requested residual."""


class NonPositiveDensityCoefficient(OpenMHDError):
    """A frozen density field used as a 1/rho coefficient is not positive."""


class DensityFloorViolated(OpenMHDError):
    """A Picard iterate produced a density below the ball floor r0."""


class MismatchedSampling(OpenMHDError):
    """Two trajectories do not share grid shape and time sampling."""


class NoConvergence(OpenMHDError):
    """The fixed-point iteration failed after exhausting window shrinks."""


class CompatibilityViolated(OpenMHDError):
    """Initial and boundary data disagree at the boundary at the start time."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ExponentConditionViolated(OpenMHDError):
    """The configured (p, q) exponents violate the well-posedness condition."""


class ParseError(OpenMHDError):
    """A scenario configuration file could not be parsed."""


class NonFiniteField(OpenMHDError):
    """An operation produced NaN or Inf values."""
