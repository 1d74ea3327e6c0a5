"""Exception types raised across the package."""


class InvalidConfigError(ValueError):
    """A configuration value is out of its allowed range."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class GridError(ValueError):
    """An interval grid is malformed or does not cover the data."""


class NumericError(ArithmeticError):
    """A loss or gradient became non-finite."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class TailDefinitionError(ValueError):
    """A censored subject has no interval after its censoring interval."""


class SeparabilityError(ValueError):
    """Scores are not risk-set separable."""


class MarginError(ValueError):
    """A margin is undefined or non-positive where a positive one is required."""


class OutOfRegimeError(ValueError):
    """A tolerance lies outside the range where a bound is valid."""
