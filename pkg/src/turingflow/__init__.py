"""Porous-media flow-manifold optimization and Turing-pattern dehomogenization."""

__version__ = "0.1.0"

from .errors import (BinarizationFailure, ConfigError, ConvergenceFailure, InvalidArgument,
                     InvalidGeometry, InvalidState, NumericalFailure, StageInputError)
from .flow import FlowSolution, FluidProps, dissipation, outlet_profile, solve_flow
from .grid import BoundarySpec, Domain, Grid, Segment, build_grid, classify_boundary
from .media import DesignField, MediaParams

__all__ = [
    "__version__",
    "BinarizationFailure", "ConfigError", "ConvergenceFailure", "InvalidArgument", "InvalidGeometry",
    "InvalidState", "NumericalFailure", "StageInputError",
    "FlowSolution", "FluidProps", "dissipation", "outlet_profile", "solve_flow",
    "BoundarySpec", "Domain", "Grid", "Segment", "build_grid", "classify_boundary",
    "DesignField", "MediaParams",
]
