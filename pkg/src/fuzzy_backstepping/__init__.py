"""Adaptive fuzzy backstepping control of input-delayed, state-constrained pure-feedback systems."""
from .controller import (AdaptiveState, ControlOutput, ControllerGains, ReferenceSignal, control_pass,
                         example_reference)
from .errors import BarrierViolation, ConfigError, EmptyFeasibleSet, SimulationDiverged
from .feasibility import (FeasibilityProblem, FeasibilityResult, estimate_rho, feasibility_search,
                          verify_prerequisites)
from .fls import FuzzyBasis, basis, make_grid_basis, regressor_norm
from .plant import DelayLine, PlantModel, eval_dynamics, example_plant, plant_from_expressions
from .sim import (ConstraintReport, PositivityLost, SimConfig, Trajectory, check_constraints, closed_loop_deriv,
                  lyapunov_surrogate, rk4_step, simulate)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveState", "BarrierViolation", "ConfigError", "ConstraintReport", "ControlOutput", "ControllerGains",
    "DelayLine", "EmptyFeasibleSet", "FeasibilityProblem", "FeasibilityResult", "FuzzyBasis", "PlantModel",
    "PositivityLost", "ReferenceSignal", "SimConfig", "SimulationDiverged", "Trajectory", "basis",
    "check_constraints", "closed_loop_deriv", "control_pass", "estimate_rho", "eval_dynamics", "example_plant",
    "example_reference", "feasibility_search", "lyapunov_surrogate", "make_grid_basis", "plant_from_expressions",
    "regressor_norm", "rk4_step", "simulate", "verify_prerequisites",
]
