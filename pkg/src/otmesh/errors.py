"""Exception hierarchy shared by all modules."""


class OTMeshError(Exception):
    """Base class for errors raised by otmesh."""


class InvalidResolutionError(OTMeshError, ValueError):
    pass


class ShapeMismatchError(OTMeshError, ValueError):
    pass


class DegenerateGeometryError(OTMeshError):
    pass


class NumericFailureError(OTMeshError):
    """A NaN or Inf appeared in an integrand."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class DomainError(OTMeshError, ValueError):
    """Input point or vector outside the admissible domain."""


class InvalidMonitorError(OTMeshError, ValueError):
    pass


class NonconvergenceError(OTMeshError):
    """An iterative solver hit its iteration limit."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StagnationError(NonconvergenceError):
    """GMRES made no progress over a full restart cycle."""


class ConvexityLossError(OTMeshError):
    """The linearised problem became ill-posed (mesh potential lost convexity)."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DivergenceError(OTMeshError):
    def __init__(self, message, iteration=None, tangled=False):
        super().__init__(message)
        self.iteration = iteration
        self.tangled = tangled


class StepFailureError(OTMeshError):
    """Line search found no step length that reduces the residual."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConfigError(OTMeshError, ValueError):
    pass
