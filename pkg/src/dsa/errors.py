"""Exception types shared across the package."""


class DSAError(Exception):
    """Base class for package errors."""


class DimensionError(DSAError, ValueError):
    """Array shapes or lengths do not match."""


class InfeasibleArgumentsError(DSAError, ValueError):
    """No admissible solution exists for the requested arguments."""


class DomainError(DSAError, ValueError):
    """An argument lies outside the valid domain."""


class ConfigurationError(DSAError, ValueError):
    """A configuration or hyperparameter value is invalid."""


class NumericError(DSAError, ArithmeticError):
    """A non-finite value appeared in a computation."""


class DivergenceError(NumericError):
    """An iterative method produced a non-finite objective."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
