"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class SdlRiskError(Exception):
    """Base class for all package errors."""


class ConfigError(SdlRiskError):
    """Invalid or inconsistent run configuration."""


class DataError(SdlRiskError):
    """Input data violates a contract (unknown label, bad counts, ...)."""


class NumericalError(SdlRiskError):
    """A numerical procedure failed (degenerate denominator, no fit, ...)."""


class ConvergenceError(NumericalError):
    """Iterative fitting did not converge within the iteration budget."""

    def __init__(self, message, deviance_path=None):
        super().__init__(message)
        self.deviance_path = list(deviance_path or [])


class DegenerateDenominatorError(NumericalError):
    """A risk formula denominator is degenerate for the given inputs."""
