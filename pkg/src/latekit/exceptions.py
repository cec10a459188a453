"""Exception types shared across the package."""


class LatekitError(Exception):
    """Base class for all package-specific errors."""


class DegenerateCovariatesError(LatekitError):
    """A covariate (cross-)covariance matrix is numerically singular."""


class RankDeficientDesignError(LatekitError):
    """The regression design matrix is rank deficient."""


class LeverageOnePointError(LatekitError):
    """A hat-matrix diagonal is 1, so HC2/HC3 weights are undefined."""


class AcceptanceRegionError(LatekitError):
    """Rerandomization failed to accept a draw within the attempt cap."""

    def __init__(self, message, observed_rate=None):
        super().__init__(message)
        self.observed_rate = observed_rate


class NoIdentificationError(LatekitError):
    """A confidence-set inversion is truly empty with a zero first stage."""


class InfeasibleTargetError(LatekitError):
    """A simulated population cannot reach the requested complier fraction."""
