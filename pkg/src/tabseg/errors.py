"""Exception hierarchy shared by every tabseg module.

The CLI maps each class to a fixed exit code, so callers should raise the
most specific class that applies.
"""


class TabsError(Exception):
    """Base class for all tabseg errors."""

    exit_code = 2


class ConfigurationError(TabsError, ValueError):
    """Invalid shapes, hyperparameters or config files."""

    exit_code = 1


class UsageError(TabsError):
    """An API was called in a state where it cannot work (e.g. backward on a non-scalar)."""

    exit_code = 1


class FormatError(TabsError):
    """Malformed or truncated on-disk file."""

    exit_code = 2


class DataError(TabsError):
    """Missing inputs or data that violates a precondition (empty mask, absent checkpoint)."""

    exit_code = 2


class UndefinedMetricError(DataError):
    """A metric is undefined for its inputs, e.g. Dice of two empty sets."""


class NumericError(TabsError, ArithmeticError):
    """NaN or Inf encountered during computation."""

    exit_code = 3
