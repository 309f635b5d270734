"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class QuadGuardError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(QuadGuardError):
    """Invalid or inconsistent configuration (raised before any simulation)."""

    exit_code = 2


class InvalidInputError(QuadGuardError, ValueError):
    """An operation received out-of-contract arguments (NaN, bad dt, ...)."""

    exit_code = 2


class NumericalError(QuadGuardError):
    """Numerical failure: singular innovation covariance, non-PSD P, ..."""

    exit_code = 3


class IntegrationDivergedError(NumericalError):
    """Plant integration produced non-finite values.

    Attributes
    ----------
    step : int
        Index of the integration step that diverged (``-1`` if unknown).
    """

    def __init__(self, message, step=-1):
        super().__init__(f"{message} (step {step})")
        self.step = step
