"""Exception types raised across the package."""


class WpcnError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(WpcnError, ValueError):
    pass


class DomainError(WpcnError, ValueError):
    """An input lies outside the feasible domain of an operation."""


class ConstraintError(WpcnError):
    """Energy-harvesting budget violated by a caller-supplied action."""


class NumericError(WpcnError, ArithmeticError):
    pass


class StateError(WpcnError, RuntimeError):
    pass


class ProtocolError(WpcnError):
    """A backhaul price message is missing or malformed."""


class UnsupportedError(WpcnError):
    pass


class ConfigError(WpcnError, ValueError):
    pass


class AggregationError(WpcnError, ValueError):
    pass
