"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Array shapes or contents are unusable (empty, mismatched, non-2-D)."""


class InvalidParameterError(ValueError):
    """A scalar parameter lies outside its admissible range."""


class NumericFailureError(ArithmeticError):
    """A computation produced NaN/Inf or failed to make progress."""
