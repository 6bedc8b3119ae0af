"""Exception hierarchy shared by the numerical modules and the CLI.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3 and failed acceptance checks with 4.
"""


class SmpLabError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigurationError(SmpLabError, ValueError):
    """Invalid parameters, inconsistent inputs or a malformed scenario."""

    exit_code = 2


class CoefficientValidationError(ConfigurationError):
    """Supplied analytic partials disagree with finite differences."""


class ExpressionError(ConfigurationError):
    """A coefficient expression failed to tokenize or parse."""

    def __init__(self, message, token=None, position=None):
        super().__init__(message)
        self.token = token
        self.position = position


class NumericalError(SmpLabError, ArithmeticError):
    """A solver produced unusable numbers or failed to converge."""

    exit_code = 3


class BlowUpError(NumericalError):
    """A non-finite value appeared in a simulated or backward process."""

    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


class EstimationError(NumericalError):
    """The regression estimator cannot be fitted (too few samples)."""


class ConvergenceError(NumericalError):
    """An iteration stopped at its budget without meeting its tolerance.

    ``trace`` holds the per-iteration diagnostic sequence (Picard gaps,
    beta-norm gaps or control-change norms) so callers can inspect it.
    """

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class ContractionError(ConvergenceError):
    """The fixed-point gap grew for several consecutive iterations."""


class AcceptanceFailure(SmpLabError):
    """A verification report did not pass."""

    exit_code = 4
