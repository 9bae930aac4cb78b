"""Exception hierarchy shared by all modules."""


class BubbleImagingError(Exception):
    """Base class for every error raised by the package."""


class DomainError(BubbleImagingError):
    """A point or parameter lies outside the region where it is defined."""


class DataError(BubbleImagingError):
    """Input data are malformed, non-finite or non-positive where positivity is required."""


class GeometryError(BubbleImagingError):
    """A surface mesh is open, non-orientable, inverted or otherwise invalid."""


class ResolutionError(BubbleImagingError):
    """A discretization parameter is too coarse (or too fine) for the request."""


class NumericalError(BubbleImagingError):
    """A numerical procedure failed (non-convergence, non-positive spectrum, ...)."""


class SolverError(NumericalError):
    """An iterative solve did not reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ResonanceProximityError(NumericalError):
    """The requested frequency sits on (or numerically at) a resonance pole."""

    def __init__(self, message, pole=None):
        super().__init__(message)
        self.pole = pole


class PreconditionError(BubbleImagingError):
    """A modelling hypothesis is violated (can be overridden where documented)."""


class ProximityError(DomainError):
    """An observation point is too close to the bubble."""


class NoResonanceError(NumericalError):
    """No prominent resonance peak inside the frequency band."""


class FitError(NumericalError):
    """A fitted resonance is unusable (e.g. non-positive squared frequency)."""


class DegenerateFieldError(NumericalError):
    """Every voxel of a reconstruction was masked out."""


class IdentifiabilityError(NumericalError):
    """The coefficient-recovery system is rank deficient."""


class SchemaError(DataError):
    """A measurement file does not match the expected schema/version."""
