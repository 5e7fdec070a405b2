"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or matrix dimensions are inconsistent."""


class ParameterError(ValueError):
    """An argument is outside its admissible range."""


class ConditioningError(ArithmeticError):
    """A Gram matrix is numerically singular; use a positive ridge."""


class DivergenceError(ArithmeticError):
    """An iterative solver produced a non-finite objective."""


class IdentifiabilityError(ValueError):
    """The mean basis leaves nothing for the hot-spot component to explain."""


class CalibrationError(RuntimeError):
    """Monte-Carlo calibration could not produce a usable result."""


class DataError(ValueError):
    """Input files are malformed or inconsistent."""
