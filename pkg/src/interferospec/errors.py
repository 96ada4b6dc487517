"""Exception types shared across the package.

Plain argument problems raise :class:`ValueError`; the subclasses below mark
the cases the CLI needs to tell apart.
"""


class RangeError(ValueError):
    """A frequency or band lies outside the domain a model is defined on."""


class ModelError(ValueError):
    """A noise model produced a non-finite or negative value."""


class UndefinedResultError(ArithmeticError):
    """A statistic has no defined value for the given data (e.g. zero clicks)."""
