"""Shared exception hierarchy.

The CLI maps these to exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3. Modules define their specific errors as subclasses.
"""


class ConsSentError(Exception):
    """Base class for every error raised by this package."""


class UsageError(ConsSentError):
    """Bad configuration, bad flags, or API misuse."""


class DataError(ConsSentError):
    """Input data cannot be processed as requested."""


class NumericError(ConsSentError):
    """Numeric failure: non-finite values or a failed gradient check."""
