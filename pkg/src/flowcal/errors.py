"""Exception types shared across the package."""


class FlowcalError(Exception):
    """Base class for all package errors."""


class SizeError(FlowcalError, ValueError):
    """A grid dimension is invalid (not a power of two, not divisible, mismatched)."""


class DomainError(FlowcalError, ValueError):
    """A scalar argument lies outside its admissible range."""


class DegenerateDataError(FlowcalError, ValueError):
    """Input data carries no usable signal (e.g. zero variance)."""


class ValidationError(FlowcalError, ValueError):
    """A loaded artifact (table, params, schedule, field file) violates its invariants."""


class ConfigError(FlowcalError, ValueError):
    """A run configuration is missing, malformed, or inconsistent."""


class NumericalError(FlowcalError, RuntimeError):
    """A computation produced non-finite values."""
