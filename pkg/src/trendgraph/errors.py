"""Exception hierarchy shared across the package.

The CLI maps the three top-level classes to process exit codes; everything
else is a programming-contract violation and surfaces as a plain exception.
"""


class UsageError(Exception):
    """Bad invocation: missing files, malformed flags or config keys."""

    exit_code = 1


class DataError(Exception):
    """Input data violates the interaction-file contract or is too short."""

    exit_code = 2


class NumericalError(Exception):
    """A numeric routine produced non-finite values."""

    exit_code = 3


class CsvFormatError(DataError):
    """Malformed interaction CSV; message carries the offending line number."""


class NegativeSalesError(DataError):
    """A sales count below zero; message carries the offending line number."""


class InsufficientHistoryError(DataError):
    """Too few months of data to form even one observation window."""


class NonFiniteError(NumericalError):
    """NaN or infinity encountered in a loss or gradient."""


class ShapeMismatchError(ValueError):
    """Operands of a matrix operation do not conform; names both shapes."""


class UndefinedAucError(ValueError):
    """AUC requested for a score set with an empty positive or negative class."""
