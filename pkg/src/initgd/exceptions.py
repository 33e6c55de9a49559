"""Exception types raised by the solvers and loaders."""


class InitgdError(Exception):
    """Base class for all package-specific errors."""


class RankDeficientError(InitgdError):
    """Coefficient matrix is numerically rank deficient."""


class StepTooLargeError(InitgdError):
    """Step size violates the convergence condition of the closed-form limit."""


class NotASolutionError(InitgdError):
    """Requested target vector does not solve the linear system."""


class ConvergenceError(InitgdError):
    """An iteration exhausted its budget before meeting its tolerance."""


class GammaSingularError(InitgdError):
    """Compact iteration hit a near-singular rescaling factor (1 - gamma ~ 0)."""


class ZeroXError(InitgdError):
    """Outer vector is zero where a nonzero vector is required."""


class NotInterpolantError(InitgdError):
    """State does not interpolate the system to the required tolerance."""


class ConstructionFailedError(InitgdError):
    """A structured initializer failed its own self-check."""


class SingularStepError(InitgdError):
    """Retraction input is rank deficient; no unique Q factor exists."""


class DimensionMismatchError(InitgdError):
    """Inputs have incompatible shapes."""


class NoGammaDataError(InitgdError):
    """Trace carries no gamma values, so zigzag detection is undefined."""


class ParseError(InitgdError):
    """A data file could not be parsed.

    Attributes
    ----------
    line : int or None
        1-based line number where parsing failed, when known.
    """

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class EmptyFileError(InitgdError):
    """A data file contained no usable rows."""
