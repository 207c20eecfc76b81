"""Exception types raised across the package."""


class LQPoisonError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(LQPoisonError, ValueError):
    pass


class NonConvergent(LQPoisonError, ArithmeticError):
    """Riccati iteration hit ``max_iter`` without meeting the tolerance."""


class NonPositiveDefinite(LQPoisonError, ArithmeticError):
    pass


class NoFeasiblePoint(LQPoisonError):
    """No admissible parameter was found inside the confidence ellipsoid."""


class Inadmissible(LQPoisonError):
    pass


class BudgetViolation(LQPoisonError, AssertionError):
    pass


class EmptyDatabase(LQPoisonError):
    pass


class LengthMismatch(LQPoisonError, ValueError):
    pass


class MissingSnapshot(LQPoisonError):
    pass


class InvalidConstants(LQPoisonError, ValueError):
    pass


class DegenerateCurve(LQPoisonError, ValueError):
    pass


class ConfigInvalid(LQPoisonError, ValueError):
    """Raised with the offending configuration key as ``key``."""

    def __init__(self, key: str, message: str = ""):
        self.key = key
        super().__init__(f"{key}: {message}" if message else key)
