"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 1,
numerical failures with 2.
"""


class ConfigError(ValueError):
    """Invalid parameters or a violated regime assumption."""


class StateSpaceTooLarge(ConfigError):
    """The joint queue state space exceeds the configured cap."""


class RegimeError(ConfigError):
    """Slot probabilities ``lam tau`` and ``mu tau`` leave the valid range."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (ill-conditioning, non-convergence)."""


class CalibrationRangeError(ValueError):
    """The requested power budget lies outside the achievable range.

    The ``curve`` attribute carries the ``(gamma, power)`` pairs evaluated
    while bracketing, so callers can see where the budget fell.
    """

    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = list(curve or [])
