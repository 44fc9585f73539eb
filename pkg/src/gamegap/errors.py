"""Exception taxonomy.

Configuration-type errors (bad parameters, dimension mismatches, excluded
cases) map to CLI exit code 2; solver failures (blow-up, non-convergence)
map to exit code 3.
"""


class GameGapError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GameGapError):
    """Invalid parameters, dimensions, or violated preconditions."""


class SamplingError(ConfigurationError):
    """A randomized construction failed (e.g. isolated vertex after retries)."""


class UnsupportedModelError(ConfigurationError):
    """The operation is not defined for the given cost model."""


class UnsupportedCaseError(ConfigurationError):
    """Parameter combination excluded by the underlying case analysis."""


class NonFiniteError(GameGapError):
    """An evaluator produced NaN or infinity."""


class SolverError(GameGapError):
    """Base class for numerical solver failures."""


class BlowUpError(SolverError):
    """Backward Riccati flow exceeded the operator-norm ceiling.

    Attributes
    ----------
    time : float
        Grid time at which the ceiling was crossed (finite-time blow-up
        happens backward in time, so this is the largest t still solvable).
    norm : float
        Operator norm observed at that time.
    """

    def __init__(self, message, time=None, norm=None):
        super().__init__(message)
        self.time = time
        self.norm = norm


class ConvergenceError(SolverError):
    """Picard or Newton iteration failed to converge.

    Attributes
    ----------
    residual : float
        Final residual / iteration delta when the iteration gave up.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
