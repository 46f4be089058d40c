"""Safe-strategy synthesis for grid worlds with limited sight."""

__version__ = "0.1.0"

from .gridworld import (
    Position,
    Scenario,
    ScenarioError,
    VisibilityTable,
    WorldGraph,
    build_opponent_graph,
    build_robot_graph,
    line_of_sight,
    parse_scenario,
    visible_cells,
)
from .model import Distribution, ExplicitModel, ModelBuilder, ModelError, make_absorbing
from .worldmodel import OpponentPolicy, UniformPolicy, attach_observations, build_world_mdp, label_states
from .abstraction import (
    AbstractionError,
    ObservationStrategy,
    RegionPartition,
    build_abstract_pg,
    build_game_direct,
    collision_hotspots,
    lift_strategy,
    refine_one_step,
    refine_regions,
)
from .solver import (
    Query,
    SolverError,
    Strategy,
    ValueResult,
    enumerate_optimal,
    evaluate_mc,
    solve_mdp,
    solve_pg,
)
from .evaluation import EvaluationReport, certify, simulate, upper_bound
from .pipeline import run_bench, run_pipeline, scenario_digest
