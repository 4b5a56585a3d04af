"""Design optimization of the inverse-permeability field."""

from .adjoint import Evaluation, FlowProblem, density_filter, fd_gradient, sensitivities
from .driver import HistoryRow, OptimResult, OptimState, optimize
from .mma import MMA, mma_step
from .objective import (MassFlowConstraint, ObjectiveWeights, mass_flow_violation,
                        outlet_uniformity, total_objective)

__all__ = [
    "Evaluation", "FlowProblem", "density_filter", "fd_gradient", "sensitivities",
    "HistoryRow", "OptimResult", "OptimState", "optimize",
    "MMA", "mma_step",
    "MassFlowConstraint", "ObjectiveWeights", "mass_flow_violation", "outlet_uniformity",
    "total_objective",
]
