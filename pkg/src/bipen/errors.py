"""Exception hierarchy and process exit codes.

Every failure raised by this package carries a coarse category that the
command-line runner maps onto its exit status: configuration problems exit
with 2, convergence failures with 3, numeric failures (NaN/Inf) with 4 and
capability gaps (a request the implementation knowingly does not support)
with 5.  Exit code 0 is success.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_NUMERIC = 4
EXIT_CAPABILITY = 5


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""

    category = "config"
    exit_code = EXIT_CONFIG


class InputError(ToolkitError):
    """Malformed call arguments: wrong shapes, empty sets, bad counts."""


class ConfigError(ToolkitError):
    """Invalid or inconsistent configuration values."""


class ConvergenceError(ToolkitError):
    """An iterative solver failed to reach its target accuracy."""

    category = "convergence"
    exit_code = EXIT_CONVERGENCE

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DivergenceError(ConvergenceError):
    """Iterates left the divergence radius; records where and when."""

    def __init__(self, message, step=None, norm=None, sequence=None):
        super().__init__(message)
        self.step = step
        self.norm = norm
        self.sequence = sequence


class NumericError(ToolkitError):
    """A non-finite value appeared; carries the offending point."""

    category = "numeric"
    exit_code = EXIT_NUMERIC

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class CapabilityError(ToolkitError):
    """The request is understood but deliberately unsupported."""

    category = "capability"
    exit_code = EXIT_CAPABILITY


class InstrumentationError(CapabilityError):
    """An instrumented run bypassed its oracle tracker (count mismatch)."""
