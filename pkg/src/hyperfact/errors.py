"""Exception types shared across the package."""


class DataFormatError(ValueError):
    """Malformed or inconsistent input data (files, indices, shapes)."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite or runaway objective value."""
