"""Exception hierarchy.

Each class carries the CLI exit code it maps to: 2 for configuration
problems, 3 for bad input data, 4 for numerical failures.
"""


class WQEDError(Exception):
    exit_code = 1


class ConfigError(WQEDError, ValueError):
    exit_code = 2


class DataError(WQEDError, ValueError):
    exit_code = 3


class NumericalError(WQEDError, ArithmeticError):
    exit_code = 4


class TruncationError(ConfigError):
    """Pulse or map window does not contain the pulse support."""


class RangeError(ConfigError, IndexError):
    """Requested time lies outside the simulation grid."""


class IntegrationError(NumericalError):
    """Fixed-step integrator is unstable or drifts in trace."""


class DecompositionError(NumericalError):
    """Schmidt decomposition of an all-zero map."""


class FitError(NumericalError):
    """Least-squares fit did not converge or is degenerate."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class IdentifiabilityError(FitError):
    """Design matrix or data set cannot constrain the fitted parameters."""


class ExtrapolationError(NumericalError):
    """Fitted shift curve never reaches the requested crossing."""


class ClockGapError(DataError):
    """More than the allowed number of consecutive clock ticks are missing."""


class StreamCorruptionError(DataError):
    """Time-tag stream is not monotone."""
