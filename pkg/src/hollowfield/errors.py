"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class HollowFieldError(Exception):
    """Base class for all package errors."""


class ConfigError(HollowFieldError):
    """Invalid configuration or usage (bad shapes, bad flag values)."""


class DataError(HollowFieldError):
    """Unreadable, malformed, or inconsistent external data."""


class IntegrityError(DataError):
    """Corrupt or truncated persisted artifacts (checkpoints, datasets)."""


class NumericalError(HollowFieldError):
    """Non-finite values or numerically unstable intermediate results."""
