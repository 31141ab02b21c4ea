"""Exception types shared across the package."""


class SlutskyLabError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SlutskyLabError):
    """Invalid or inconsistent configuration (bad keys, shapes, ranges)."""


class NonPositiveQuantity(SlutskyLabError):
    """A quantity that must be strictly positive is zero or negative."""


class VariantError(SlutskyLabError):
    """Operation called with an interaction variant it does not support."""


class DomainError(SlutskyLabError):
    """Argument outside the mathematical domain of a function."""


class NoConvergence(SlutskyLabError):
    """Iterative solver failed to reach its tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class SingularHessian(SlutskyLabError):
    """Curvature matrix is singular where an inverse is required."""


class CalibrationFailure(SlutskyLabError):
    """Chemical-potential calibration did not hit the budget target."""


class MissingMoments(SlutskyLabError):
    """Requested estimator needs moments the chain did not accumulate."""


class DimensionMismatch(SlutskyLabError):
    """Array arguments have inconsistent shapes."""


class EigSolverFailure(SlutskyLabError):
    """Eigenvalue computation failed to converge."""


class UnsupportedSize(SlutskyLabError):
    """Problem size outside the supported range of this routine."""
