"""Exception types raised by the library."""


class TugObstacleError(Exception):
    """Base class for all library errors."""


class EmptyInterior(TugObstacleError, ValueError):
    pass


class FatteningTooThin(TugObstacleError, ValueError):
    pass


class RadiusExceedsFattening(TugObstacleError, ValueError):
    pass


class InvalidExponent(TugObstacleError, ValueError):
    pass


class DataCompatibilityError(TugObstacleError, ValueError):
    """Boundary data and obstacle violate a standing hypothesis."""


class NoConvergence(TugObstacleError, RuntimeError):
    """Iteration stopped at ``max_iter`` with residual above tolerance.

    The last iterate and the solve report stay attached so callers can
    inspect or persist them.
    """

    def __init__(self, message, field=None, report=None):
        super().__init__(message)
        self.field = field
        self.report = report


class IllegalMove(TugObstacleError, RuntimeError):
    pass


class DegeneratePull(TugObstacleError, ValueError):
    pass


class VanishingGradient(TugObstacleError, ValueError):
    pass


class OracleDisagreement(TugObstacleError, RuntimeError):
    pass
