"""Exception types shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters more than the message wording: ConfigError -> 2, DataError and
ValidationError raised during data loading -> 3, NumericFailure -> 4.
"""


class ValidationError(ValueError):
    """An argument violates a documented precondition or invariant."""


class ConfigError(ValueError):
    """A run configuration is malformed, has unknown keys, or bad values."""


class DataError(ValueError):
    """A dataset on disk is missing, inconsistent, or unreadable."""


class NumericFailure(RuntimeError):
    """A numeric computation produced non-finite values or failed a check."""
