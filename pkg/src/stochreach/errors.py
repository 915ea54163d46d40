"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not agree."""


class ValidationError(ValueError):
    """A parameter violates its documented constraints."""


class StepRangeError(ValueError):
    """A time step lies outside ``[1, T]``."""


class UnsupportedError(ValueError):
    """The requested operation is not available for this input class."""


class AccuracyError(ArithmeticError):
    """A numerical procedure could not meet its accuracy requirement."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonConvergenceError(AccuracyError):
    """Quadrature ran out of evaluations before reaching its tolerance.

    The best available estimate is kept on ``result``.
    """

    def __init__(self, message, result):
        super().__init__(message, residual=result.residual)
        self.result = result


class InfeasibleTargetError(ValueError):
    """A requested pursuer position cannot be reached."""
