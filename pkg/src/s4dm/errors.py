"""Exception hierarchy shared by every module."""


class S4DMError(Exception):
    """Base class for all package errors."""


class ParameterError(S4DMError, ValueError):
    """An argument lies outside its admissible range."""


class DomainError(S4DMError, ValueError):
    """Input data outside the domain of a transform (e.g. non-positive amplitude)."""


class RangeError(S4DMError, ValueError):
    """Value not attainable by the forward transform, so it cannot be inverted."""


class ShapeError(S4DMError, ValueError):
    """Array shapes are inconsistent."""


class NumericError(S4DMError, ArithmeticError):
    """Non-finite or degenerate numeric result."""


class FitError(NumericError):
    """Lambda fitting failed on the whole search grid."""


class FormatError(S4DMError, ValueError):
    """Malformed file (checkpoint, raster, key = value text)."""
