"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1,
data/format problems exit 2, numeric failures exit 3.
"""


class OdcastError(Exception):
    """Base class for all package errors."""


class NumericError(OdcastError):
    """Non-finite values or numerically impossible states."""


class DomainError(NumericError):
    """An operation was evaluated outside its mathematical domain."""


class ShapeError(OdcastError):
    """Arguments with incompatible shapes or sizes."""


class DataError(OdcastError):
    """Malformed or inconsistent input data."""


class FormatError(DataError):
    """A persisted artifact failed validation (bad magic, truncation)."""
