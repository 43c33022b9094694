"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid problem set-up (domain too small, unsupported stencil, ...)."""


class MissingNeighbourError(LookupError):
    """A stencil neighbour ``site + rho`` is not part of the site set."""

    def __init__(self, site, rho):
        self.site = tuple(int(s) for s in site)
        self.rho = tuple(int(r) for r in rho)
        super().__init__(f"neighbour {self.rho} of site {self.site} is not resolvable")


class SingularConfigurationError(ArithmeticError):
    """A finite difference has zero length, so the potential is undefined."""


class GeometryError(RuntimeError):
    """Mesh construction or polygon clipping failed."""


class InfeasibleSystemError(RuntimeError):
    """The consistency equations could not be solved to tolerance."""

    def __init__(self, message, max_residual=None, row=None):
        self.max_residual = max_residual
        self.row = row
        super().__init__(message)


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration limit."""

    def __init__(self, message, grad_norm=None, state=None):
        self.grad_norm = grad_norm
        self.state = state
        super().__init__(message)
