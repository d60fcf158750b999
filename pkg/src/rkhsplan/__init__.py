"""Risk-aware Frenet trajectory planning with kernel-embedding collision risk."""

from .frenet import (BehavioralInput, BoundaryConditions, CurvatureProfile, EgoTrajectory,
                     FrenetState, PlannerGains, VehicleParams, frenet_plan)
from .kernels import KernelConfig, WeightedSampleSet, mmd_sq, mmd_to_dirac
from .optimizer import (ConstraintSpec, CostWeights, OptimizerConfig, PlanResult, RiskCost,
                        plan, project, smoothness_cost)
from .reduced_set import CemConfig, ReducedSet, optimal_weights, reduce
from .risk import CvarConfig, ObstacleSampleSet, r_cvar, r_mmd, r_saa

__version__ = "0.1.0"

__all__ = [
    "BehavioralInput", "BoundaryConditions", "CurvatureProfile", "EgoTrajectory", "FrenetState",
    "PlannerGains", "VehicleParams", "frenet_plan",
    "KernelConfig", "WeightedSampleSet", "mmd_sq", "mmd_to_dirac",
    "ConstraintSpec", "CostWeights", "OptimizerConfig", "PlanResult", "RiskCost", "plan",
    "project", "smoothness_cost",
    "CemConfig", "ReducedSet", "optimal_weights", "reduce",
    "CvarConfig", "ObstacleSampleSet", "r_cvar", "r_mmd", "r_saa",
]
