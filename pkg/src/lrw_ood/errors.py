"""Exception types shared across the package."""


class LrwOodError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(LrwOodError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(LrwOodError, ValueError):
    """An input lies outside the domain of an operation."""


class UsageError(LrwOodError, RuntimeError):
    """An API was called in a way its contract forbids."""


class ConfigError(LrwOodError, ValueError):
    """A configuration value is missing, unknown or out of range."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ParseError(LrwOodError, ValueError):
    """A file does not follow the documented format."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(LrwOodError, ValueError):
    """A structural invariant (symmetry, self-loops, label range) is violated."""


class DivergenceError(LrwOodError, ArithmeticError):
    """Training produced a non-finite loss."""
