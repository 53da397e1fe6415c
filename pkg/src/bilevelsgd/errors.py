"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI: ConfigurationError/DataError -> 1,
I/O failures -> 2, NumericError -> 3.
"""


class BilevelError(Exception):
    """Base class for all library errors."""


class ConfigurationError(BilevelError):
    """Invalid configuration: bad shapes, bad hyper-parameters, unknown keys."""


class DataError(BilevelError):
    """Bad data: ingestion failures, labels out of range, sampling impossibilities."""


class NumericError(BilevelError):
    """Non-finite values or unsolvable linear systems encountered at runtime."""


class InternalError(BilevelError):
    """Invariant violations that indicate a bug in calling code."""
