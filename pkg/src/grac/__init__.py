"""Consistent atomistic/continuum coupling for a 2D triangular crystal."""
from .errors import (ConfigurationError, ConvergenceError, GeometryError,
                     InfeasibleSystemError, MissingNeighbourError,
                     SingularConfigurationError)
from .lattice import TRIANGULAR, build_reference_config, stencil
from .potential import EAMParams, find_F0

__version__ = "0.1.0"
