"""Exception types shared across the package.

The CLI maps these onto exit codes, so library code should raise the
most specific one that applies rather than bare ValueError.
"""


class TopopromptError(Exception):
    """Base class for package errors."""


class ConfigError(TopopromptError):
    """Invalid configuration: bad option values, unknown keys, impossible requests."""


class DataError(TopopromptError):
    """Malformed or inconsistent input data: parse failures, dimension mismatches."""


class NumericError(TopopromptError):
    """Non-finite values where finite ones are required (diverged optimization etc.)."""
