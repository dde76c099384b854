"""Exception hierarchy. Each family maps onto a CLI exit code."""


class KnudsenError(Exception):
    exit_code = 3


class ConfigError(KnudsenError):
    exit_code = 1


class ParameterError(KnudsenError, ValueError):
    exit_code = 1


class GeometryError(KnudsenError):
    exit_code = 2


class TrajectoryRejected(GeometryError):
    """Singular trajectory (corner hit or grazing contact); callers resample."""


class CornerSignal(TrajectoryRejected):
    pass


class TangencySignal(TrajectoryRejected):
    pass


class NonterminatingTrajectoryError(TrajectoryRejected):
    pass


class NumericError(KnudsenError, ArithmeticError):
    exit_code = 3


class ReliabilityError(NumericError):
    """Estimator inputs are too ill-conditioned to trust (spectral gap ~ 0)."""


class DegenerateFlatnessError(ParameterError, ReliabilityError):
    """h = 0: the weak-scattering series has no meaning for a flat wall."""


class StorageError(KnudsenError, OSError):
    exit_code = 4
