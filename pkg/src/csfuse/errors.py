"""Exception types shared across the package."""


class CsfuseError(Exception):
    """Base class for all csfuse errors."""


class DimensionError(CsfuseError, ValueError):
    """Operand shapes are incompatible with the operator."""


class CovarianceError(CsfuseError, ValueError):
    """A covariance argument is not symmetric / positive semidefinite."""


class ConfigError(CsfuseError, ValueError):
    """An experiment or scenario configuration is invalid."""


class FitError(CsfuseError, RuntimeError):
    """A dependence-model fit failed (parameter outside the family domain)."""


class NumericalError(CsfuseError, RuntimeError):
    """A numerical routine failed to converge or produced a degenerate result."""


class ModelError(CsfuseError, RuntimeError):
    """A Gaussian detection model could not be constructed."""


class LeastSquaresError(CsfuseError, RuntimeError):
    """The normal equations of the off-diagonal recovery are singular."""


class CalibrationError(CsfuseError, ValueError):
    """Too few trials for a reliable threshold quantile."""


class DataError(CsfuseError, ValueError):
    """Input data is insufficient or degenerate for the requested estimate."""
