"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
NumericError -> 3, IncompatibilityError -> 4.
"""


class SparkError(Exception):
    """Base class for all package errors."""


class ConfigError(SparkError):
    """Invalid configuration file, flag, or argument."""


class ContractViolation(SparkError):
    """A documented precondition or invariant was violated by the caller."""


class NumericError(SparkError):
    """NaN/Inf or other numeric failure during computation."""


class IncompatibilityError(SparkError):
    """Checkpoint, dataset, and config do not fit together."""


class FormatError(SparkError):
    """A binary container is malformed (bad magic, truncation, checksum)."""
