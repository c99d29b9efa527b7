"""Exception types shared across the package."""


class DynidentError(Exception):
    """Base class for all package-specific errors."""


class ModelConfigError(DynidentError):
    """Malformed or inconsistent model configuration."""


class LogFormatError(DynidentError):
    """Malformed trajectory log (schema, ordering, or value errors)."""


class DimensionError(DynidentError):
    """Input array has the wrong shape for the model."""


class StructuralZeroError(DynidentError):
    """Nonzero values supplied for parameters the model declares as absent."""


class DegenerateModelError(DynidentError):
    """Mass matrix is numerically singular at the given configuration."""


class RankError(DynidentError):
    """Stacked regressor does not expose the expected rank structure."""


class PaddingError(DynidentError):
    """Signal too short for the requested zero-phase filter."""


class ScalingError(DynidentError):
    """Column scaling is undefined (zero-RMS column)."""


class InfeasibleError(DynidentError):
    """No feasible point found for the requested constraints."""


class ConvergenceError(DynidentError):
    """Solver finished without meeting its declared optimality contract."""


class UndefinedMetricError(DynidentError):
    """Requested metric is undefined for the given data (e.g. zero-RMS reference)."""


class InstabilityError(DynidentError):
    """Closed-loop trial diverged (state left the sane envelope)."""
