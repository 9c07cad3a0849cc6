"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation problems exit 2,
simulation failures 3, bad input data 4, failed experiment verdicts 5.
"""


class BssmpvError(Exception):
    """Base class for all package errors."""


class ValidationError(BssmpvError, ValueError):
    """Invalid parameters, kernel/vol specs, configs, or flag values."""


class ConditionError(ValidationError):
    """A requested computation is outside its validity region."""


class QuadratureError(BssmpvError, RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class DegenerateCovarianceError(BssmpvError, ValueError):
    """Numerical moment requested for a singular correlation matrix."""


class SimulationError(BssmpvError, RuntimeError):
    """Path synthesis failed (e.g. embedding and fallback both failed)."""


class DataError(BssmpvError, ValueError):
    """Ingested series is unusable (NaNs, wrong shape, bad CSV)."""


class VerdictFailure(BssmpvError, RuntimeError):
    """An experiment ran fine but at least one verdict failed."""


class ConditionWarning(UserWarning):
    """Simulation requested for a configuration whose asymptotic regime is
    known to be degenerate; the paths are fine, the standard limits are not.
    """


class RobustnessWarning(UserWarning):
    """A drift component is rough enough to disturb the estimator limits."""


class TruncationWarning(UserWarning):
    """A truncated series was cut before its reported error bound fell
    below tolerance; the value carries the stated tail_bound."""
