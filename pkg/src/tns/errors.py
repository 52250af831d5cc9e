"""Exception hierarchy shared across the package."""


class TNSError(Exception):
    """Base class for all package errors."""


class DataError(TNSError, ValueError):
    """Malformed or inconsistent dataset input."""


class FormatError(DataError):
    """A CSV row has the wrong shape (e.g. ragged feature columns)."""


class OrderingError(DataError):
    """Timestamps decrease between consecutive rows."""


class ParseError(DataError):
    """A field could not be parsed as a number."""


class ConfigError(TNSError, ValueError):
    """Invalid configuration or parameter value."""


class ContractError(TNSError, ValueError):
    """A caller violated a function's precondition (shape, range, stale tape)."""


class NumericError(TNSError, ArithmeticError):
    """Non-finite values encountered during optimization or checking."""
