"""Robust expansion planning for steady-state gas transmission networks."""

from .formulation import (
    ConicRow,
    ConstraintSystem,
    ExpansionPlan,
    FormulationError,
    LinearRow,
    VariableRef,
    build_deterministic_model,
    build_robust_model,
    build_scenario_block,
    fix_plan,
    fix_pressures,
    mccormick_rows,
)
from .network import Compressor, InstanceError, Network, Node, Pipe, expansion_cost, load_instance, read_instance, resistance, validate
from .physics import NetworkState, feasibility, flow_state, monotonicity_check, steady_state_solve
from .solver import SolveResult, SolverOptions, incumbent_verify, oa_cut, solve
from .uncertainty import DemandProfile, Scenario, ScenarioSet, extremal_scenarios, nominal_scenario, sample, scale_profile

__all__ = [
    "Compressor",
    "ConicRow",
    "ConstraintSystem",
    "DemandProfile",
    "ExpansionPlan",
    "FormulationError",
    "InstanceError",
    "LinearRow",
    "Network",
    "NetworkState",
    "Node",
    "Pipe",
    "Scenario",
    "ScenarioSet",
    "SolveResult",
    "SolverOptions",
    "VariableRef",
    "build_deterministic_model",
    "build_robust_model",
    "build_scenario_block",
    "expansion_cost",
    "extremal_scenarios",
    "feasibility",
    "fix_plan",
    "fix_pressures",
    "flow_state",
    "incumbent_verify",
    "load_instance",
    "mccormick_rows",
    "monotonicity_check",
    "nominal_scenario",
    "oa_cut",
    "read_instance",
    "resistance",
    "sample",
    "scale_profile",
    "solve",
    "steady_state_solve",
    "validate",
]
