"""Exception types shared across the package."""


class FermiflowError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(FermiflowError, ValueError):
    """An array has the wrong shape or dimensionality."""


class ValidationError(FermiflowError, ValueError):
    """An input fails a mathematical precondition (hermiticity, norm, ...)."""


class RangeError(FermiflowError, ValueError):
    """A scalar parameter is outside its admissible range."""


class CapacityError(FermiflowError, ValueError):
    """A requested problem size exceeds the supported dense-storage limits."""


class UnsupportedError(FermiflowError, ValueError):
    """A structurally valid input lies outside the implemented scope."""


class NumericError(FermiflowError, ArithmeticError):
    """A computation produced non-finite or divergent values."""


class DivergenceError(NumericError):
    """An integrator or series left the trustworthy regime."""


class ConfigError(FermiflowError, ValueError):
    """An experiment configuration file failed validation."""
