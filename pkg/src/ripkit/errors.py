"""Exception types shared across the package."""


class RipkitError(Exception):
    pass


class ValidationError(RipkitError, ValueError):
    """Input outside the domain of an operation."""


class SingularityError(RipkitError, ArithmeticError):
    """Rank-deficient or zero-norm input where full rank is required."""


class NumericalFailure(RipkitError, RuntimeError):
    """Iteration cap hit or a post-condition check failed."""
