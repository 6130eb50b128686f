"""Exception types shared across the package."""


class DataValidationError(ValueError):
    """Raised when input records or configuration fail validation."""


class NumericalStateError(RuntimeError):
    """Raised when a posterior or cache enters a non-finite or impossible state.

    The fit loop treats this as fatal for the current restart only.
    """


class DegenerateEmissionError(NumericalStateError):
    """Raised when an emission column is entirely -inf (no admissible state)."""
