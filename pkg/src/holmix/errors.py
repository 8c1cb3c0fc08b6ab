"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the declared domain of an operation."""


class NumericError(RuntimeError):
    """A numerical procedure failed to converge.

    Carries whatever diagnostic payload the caller needs to act on
    (final bracket, residual, iteration count).
    """

    def __init__(self, message, **payload):
        super().__init__(message)
        self.payload = payload


class LadderExhaustedError(NumericError):
    """A point fell below the deepest precomputed preimage of 1/2.

    The caller must rebuild the ladder with a larger depth.
    """
