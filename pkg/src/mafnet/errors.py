"""Exception hierarchy shared across the package.

Two broad families matter for the CLI exit-code contract: data errors
(malformed files, missing modalities, bad shapes) map to exit code 3,
numeric failures (non-finite losses, degenerate inputs) map to exit code 4.
"""


class MafnetError(Exception):
    """Base class for all package errors."""


class DataError(MafnetError):
    """Malformed or inconsistent input data (CLI exit code 3)."""


class NumericError(MafnetError):
    """Numeric failure such as a non-finite loss (CLI exit code 4)."""


class UsageError(MafnetError):
    """Invalid invocation or configuration (CLI exit code 2)."""
