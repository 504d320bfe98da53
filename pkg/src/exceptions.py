"""Error types raised by the laboratory"""


class LabError(ValueError):
    """Base class for all laboratory errors"""


class ZeroVector(LabError):
    """Vector cannot be normalised onto the simplex"""


class NotAllowable(LabError):
    """Matrix has a zero row or a zero column, or a negative entry"""


class DimensionMismatch(LabError):
    """Operands live in different dimensions"""


class MissingMatrices(LabError):
    """A draw was requested for replay but its matrices were not retained"""


class UnsupportedDim(LabError):
    """Grid operations are only offered for d = 2"""


class NotCentered(LabError):
    """The law's Lyapunov exponent is not zero within tolerance"""


class QuadratureFailure(LabError):
    """Adaptive quadrature did not reach the requested tolerance"""


class InsufficientSamples(LabError):
    """Monte Carlo standard error is too large relative to the theory value"""


class InsufficientSurvivors(LabError):
    """Too few trajectories survived to build a conditional law"""


class ConfigError(LabError):
    """A JSON configuration violates its schema"""


class NotCalibrated(LabError):
    """A verification was requested before calibration"""
