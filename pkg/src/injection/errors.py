"""Exception types raised across the package."""


class InjectionError(Exception):
    """Base class for all package errors."""


class ConfigError(InjectionError):
    """A configuration file could not be parsed."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ValidationError(InjectionError, ValueError):
    """A configuration value violates an invariant."""


class ShapeError(InjectionError, ValueError):
    pass


class DatasetError(InjectionError):
    pass


class StatisticsError(InjectionError, ValueError):
    pass


class NumericError(InjectionError, ArithmeticError):
    pass


class TrainingError(InjectionError):
    """Raised when a loss term becomes non-finite; carries the last report."""

    def __init__(self, message, term=None, report=None):
        super().__init__(message)
        self.term = term
        self.report = report


class CheckpointError(InjectionError):
    pass
