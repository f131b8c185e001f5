"""Exception types raised by calibeat."""


class CalibeatError(Exception):
    """Base class for all calibeat errors."""


class InvalidSimplex(CalibeatError, ValueError):
    """A vector is not a probability vector within tolerance."""


class SingularGradient(CalibeatError, ArithmeticError):
    """The gradient of the convex representation is infinite at the point."""


class UndefinedFirstPrediction(CalibeatError, ValueError):
    """Follow The Leader has no prediction before any outcome is seen."""


class InvalidEta(CalibeatError, ValueError):
    pass


class InvalidEpsilon(CalibeatError, ValueError):
    pass


class OutOfGrid(CalibeatError, ValueError):
    """A forecast coordinate lies below the 1/T floor of the binning grid."""


class Unsupported(CalibeatError, ValueError):
    pass


class HorizonTooSmall(CalibeatError, ValueError):
    pass


class ConfigError(CalibeatError, ValueError):
    pass
