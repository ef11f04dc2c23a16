"""Cascading-failure simulation on DC power-flow grids with artificial line limits."""
from __future__ import annotations

__version__ = "0.1.0"

from importlib import resources

from .cascade import Physics, SimulationError, SimulationTrace, attack_the_grid
from .dcflow import FlowState, NumericalError, solve_flows
from .grid import (
    Bus,
    GridParseError,
    GridValidationError,
    Line,
    PowerGrid,
    SynthSpec,
    VoltageClass,
    build_grid,
    grid_hash,
    load_grid,
    save_grid,
    synth_grid,
    topology_stats,
)
from .limits import (
    DEFAULT_ALPHAS,
    LimitSet,
    LinearLimitRegressor,
    ProportionalLoading,
    fit_linear_model,
    proportional_limits,
    real_limits,
    score_limits,
    topological_limits,
)
from .strategies import AttackPlan, AttackType, Regime, Strategy, make_plan, rank_nodes
from .experiments import (
    TraceStore,
    damage_curves,
    estimate_true_alpha,
    loss_order_correlation,
    run_batch,
    spearman,
    strategy_rank_rmse,
)

FIXTURE_SPEC = SynthSpec(n_nodes=512, n_edges=698, alpha=5.0, seed=7)


def fixture_paths():
    """Paths of the bundled 512-bus/698-line grid (planted tolerance 5)."""
    root = resources.files(__name__) / "data"
    return root / "fixture_nodes.csv", root / "fixture_edges.csv"


def load_fixture() -> PowerGrid:
    nodes, edges = fixture_paths()
    return load_grid(nodes, edges)


__all__ = [
    "AttackPlan", "AttackType", "Bus", "DEFAULT_ALPHAS", "FIXTURE_SPEC", "FlowState",
    "GridParseError", "GridValidationError", "Line", "LimitSet", "LinearLimitRegressor",
    "NumericalError", "Physics", "PowerGrid", "ProportionalLoading", "Regime",
    "SimulationError", "SimulationTrace", "Strategy", "SynthSpec", "TraceStore",
    "VoltageClass", "attack_the_grid", "build_grid", "damage_curves", "estimate_true_alpha",
    "fit_linear_model", "fixture_paths", "grid_hash", "load_fixture", "load_grid",
    "loss_order_correlation", "make_plan", "proportional_limits", "rank_nodes", "real_limits",
    "run_batch", "save_grid", "score_limits", "solve_flows", "spearman", "strategy_rank_rmse",
    "synth_grid", "topological_limits", "topology_stats",
]
