"""Hybrid driving-stepping locomotion planning toolkit."""
from .world import (
    HeightMap,
    HeightSample,
    ScenarioSpec,
    generate_scenario,
    downsample,
    load,
    save,
)
from .costs import CostParams, CostStack, TerrainFeatures, build_cost_stack
from .lattice import LatticeState, Maneuver, PathPlan
from .abstraction import LevelLayout, abstract_state, refine_state, refine_segment
from .search import (
    BudgetExhaustedError,
    HeuristicField,
    NoPathError,
    PlanCancelledError,
    PlanningError,
    PlanResult,
    SearchParams,
    plan_ara_star,
    plan_states,
    precompute_heuristic,
    replay_plan,
)

__version__ = "0.1.0"

__all__ = [
    "HeightMap",
    "HeightSample",
    "ScenarioSpec",
    "generate_scenario",
    "downsample",
    "load",
    "save",
    "CostParams",
    "CostStack",
    "TerrainFeatures",
    "build_cost_stack",
    "LatticeState",
    "Maneuver",
    "PathPlan",
    "LevelLayout",
    "abstract_state",
    "refine_state",
    "refine_segment",
    "BudgetExhaustedError",
    "HeuristicField",
    "NoPathError",
    "PlanCancelledError",
    "PlanningError",
    "PlanResult",
    "SearchParams",
    "plan_ara_star",
    "plan_states",
    "precompute_heuristic",
    "replay_plan",
    "__version__",
]
