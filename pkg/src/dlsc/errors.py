"""Exception hierarchy shared across the package.

Everything raised on bad user input or bad data derives from
:class:`DlscError` so callers (CLI, HTTP service) can map the whole family
to a single failure path.
"""


class DlscError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(DlscError):
    """A file does not conform to its binary format (magic, version, layout)."""


class TruncatedFileError(FormatError):
    """A file or buffer ended before the expected number of bytes."""


class DimensionMismatchError(DlscError):
    """Grid extents disagree between two objects that must match."""


class NonFiniteDataError(DlscError):
    """Input data contains NaN or Inf values."""


class DegenerateNormError(DlscError):
    """A relative error was requested against a zero-norm reference."""
