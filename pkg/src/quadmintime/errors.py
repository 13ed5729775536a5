"""Exception hierarchy shared by the solver modules."""


class QuadMintimeError(Exception):
    """Base class for all library errors."""


class PathError(QuadMintimeError, ValueError):
    pass


class OutOfDomainError(PathError):
    pass


class OutOfTubeError(PathError):
    pass


class ProjectionAmbiguityError(PathError):
    pass


class InconsistentProjectionError(PathError):
    pass


class SingularityError(QuadMintimeError, ValueError):
    """Pitch too close to +-pi/2 for the Euler-rate map."""


class TransverseDomainError(QuadMintimeError, ValueError):
    """Tangential speed or curvature factor left the admissible set."""


class CorridorError(QuadMintimeError, ValueError):
    pass


class InfeasibleCorridorError(CorridorError):
    pass


class FlatnessError(QuadMintimeError, ValueError):
    pass


class InfeasibleInitializationError(QuadMintimeError, ValueError):
    pass


class DivergedProjectionError(QuadMintimeError, RuntimeError):
    def __init__(self, message, s=None, index=None):
        super().__init__(message)
        self.s = s
        self.index = index


class GainDesignError(QuadMintimeError, RuntimeError):
    pass


class ConditioningError(QuadMintimeError, RuntimeError):
    pass


class LineSearchError(QuadMintimeError, RuntimeError):
    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class ConfigError(QuadMintimeError, ValueError):
    def __init__(self, message, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
