"""holmix: numerical laboratory for intermittent interval maps.

Covers the full pipeline from the map family itself (neutral fixed point at 0,
uniformly expanding branch on (1/2, 1]) through invariant densities, discretized
transfer operators, renewal-coupling simulation, and Birkhoff-sum path
statistics in Holder norms.
"""

__version__ = "0.1.0"

from holmix.errors import DomainError, NumericError, LadderExhaustedError

__all__ = [
    "DomainError",
    "NumericError",
    "LadderExhaustedError",
    "__version__",
]
