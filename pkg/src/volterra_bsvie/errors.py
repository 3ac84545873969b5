"""Exception hierarchy shared across the package."""


class BsvieError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(BsvieError, ValueError):
    pass


class ShapeError(BsvieError, ValueError):
    pass


class SimulationError(BsvieError, RuntimeError):
    pass


class DataError(BsvieError, ValueError):
    pass


class NumericError(BsvieError, ArithmeticError):
    pass


class DivergenceError(BsvieError, RuntimeError):
    pass


class StateError(BsvieError, RuntimeError):
    pass


class DomainError(BsvieError, ValueError):
    pass


class NonConvergenceError(BsvieError, RuntimeError):
    """Picard loop hit ``max_iter``; ``trace`` and ``field`` hold the last state."""

    def __init__(self, message, trace=(), field=None):
        super().__init__(message)
        self.trace = tuple(trace)
        self.field = field


class ExpressionError(BsvieError, ValueError):
    """Malformed expression; ``position`` is a 0-based character offset."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position
