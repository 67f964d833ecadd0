"""Exception types shared across the package."""


class CvpMassError(Exception):
    """Base class for all package errors."""


class QuadratureFailure(CvpMassError):
    """An integrator could not meet the requested tolerance."""


class NonFiniteIntegrand(CvpMassError):
    """An integrand evaluated to NaN or infinity."""


class NonDifferentiableKernel(CvpMassError):
    """A derivative of a kernel was requested where none exists (top-hat)."""


class UnsupportedOrder(CvpMassError):
    """Requested quadrature order below the supported minimum."""


class SingularLine(CvpMassError):
    """A line integral passes too close to the potential's singularity."""


class SlowDecay(CvpMassError):
    """Paired line-integrand does not decay at the declared tail order."""


class NonInvertibleMap(CvpMassError):
    """Sampled deformation map is not injective on the domain of interest."""


class VolumeConstraintViolated(CvpMassError):
    """mu(Omega) and mu~(Omega~) differ beyond tolerance."""


class StepTooSmall(CvpMassError):
    """Finite-difference noise dominates the requested derivative."""


class FDStepFailure(CvpMassError):
    """Finite-difference stencil could not be evaluated."""


class IterationDiverged(CvpMassError):
    """Fixed-point alignment iteration diverged."""


class NonConvergentTrace(CvpMassError):
    """Exhaustion trace is inconsistent with the fitted decay model."""


class ConstraintViolated(CvpMassError):
    """A boundary-adapted perturbation violates its preconditions."""


class OptimizerStalled(CvpMassError):
    """Derivative-free search stalled; best value found is attached."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConfigInvalid(CvpMassError):
    """A run configuration failed validation; message carries a field path."""
