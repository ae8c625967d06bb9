"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input lies outside the mathematically admissible region."""


class NumericalError(RuntimeError):
    """An iterative scheme failed to converge or produced non-finite values."""


class FormatError(ValueError):
    """A serialized artifact is corrupt or has an incompatible version."""
