"""Exception types shared across the package."""


class DivergenceError(ArithmeticError):
    """A loss, gradient or simulator state became non-finite."""


class FormatVersionError(ValueError):
    """A persisted file carries a format version this build cannot read."""


class DegenerateSampleError(ValueError):
    """Every nearest-neighbor distance in a sample is zero."""
