"""Exception hierarchy shared by all modules."""


class RydSqueezeError(Exception):
    """Base class for package errors."""


class InvalidSpecError(RydSqueezeError, ValueError):
    """A parameter set violates its documented constraints."""


class DimensionError(RydSqueezeError, ValueError):
    """Array shapes do not match the lattice size."""


class ResourceError(RydSqueezeError):
    """Requested computation exceeds a hard size limit."""


class NumericalError(RydSqueezeError, FloatingPointError):
    """Non-finite values appeared during integration."""


class UndefinedSqueezingError(RydSqueezeError, ValueError):
    """Squeezing parameter requested for a vanishing Bloch vector."""


class AnalysisError(RydSqueezeError, ValueError):
    """A reduction could not be computed from the supplied series."""
