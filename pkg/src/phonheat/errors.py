"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 2,
numerical failures (non-convergence, ill-conditioning) exit 3, and
trajectory divergence exits 4.
"""


class PhonheatError(Exception):
    """Base class for package errors."""


class ConfigError(PhonheatError):
    """Invalid configuration or arguments."""

    exit_code = 2


class NumericsError(PhonheatError):
    """A solver failed to reach its tolerance or hit an ill-conditioned system."""

    exit_code = 3


class ConditioningError(NumericsError):
    """Condition number estimate exceeded the refusal threshold."""


class DivergenceError(PhonheatError):
    """A stochastic trajectory left the finite range."""

    exit_code = 4

    def __init__(self, message: str, site: int | None = None, step: int | None = None):
        super().__init__(message)
        self.site = site
        self.step = step
