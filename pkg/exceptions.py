"""
Error types raised by the simulator.

All of them derive from a built-in exception so callers that only know about
ValueError / ArithmeticError keep working.
"""


class ConfigurationError(ValueError):
    """Inconsistent model, client, scenario or policy configuration."""


class InvalidQueryError(ValueError):
    """Query definition that cannot be evaluated (e.g. Variance with M < 2)."""


class InvalidArgumentError(ValueError):
    """Bad call argument such as zero Monte Carlo samples or a non-positive temperature."""


class BeliefError(ValueError):
    """Belief covariance that is not symmetric positive semidefinite."""


class DegenerateUpdateError(ArithmeticError):
    """Innovation variance too small to invert in a Kalman update."""


class NumericError(ArithmeticError):
    """NaN inputs, divergence or non-convergent iterations."""
