"""Node-ranking attack strategies and removal schedules.

Rankings are total orders: descending score, ties broken by ascending bus id.
Schedules hand the cascade engine the next group of bus indices to remove.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .dcflow import FlowState
from .grid import PowerGrid
from .limits import LimitSet

__all__ = [
    "AdaptiveSchedule",
    "AttackPlan",
    "AttackType",
    "FixedSchedule",
    "FlexibleSchedule",
    "Regime",
    "Strategy",
    "entropic_degree",
    "make_plan",
    "plan_from_json",
    "plan_to_json",
    "rank_nodes",
]


class Strategy(str, Enum):
    RANDOM = "random"
    DEGREE = "degree"
    BETWEENNESS = "betweenness"
    ELECTRICAL_CENTRALITY = "electrical_centrality"
    ENTROPIC_DEGREE_LIMIT = "entropic_degree_limit"
    ENTROPIC_DEGREE_FLOW = "entropic_degree_flow"


TARGETED_STRATEGIES = (
    Strategy.ENTROPIC_DEGREE_LIMIT,
    Strategy.ENTROPIC_DEGREE_FLOW,
    Strategy.DEGREE,
    Strategy.BETWEENNESS,
    Strategy.ELECTRICAL_CENTRALITY,
)


class AttackType(str, Enum):
    FIXED = "fixed"
    FLEXIBLE = "flexible"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class Regime:
    """``sequential`` (one node per round), ``simultaneous`` (all targets in
    one round) or ``hybrid`` (rounds of ``group_size`` nodes)."""

    kind: str = "sequential"
    group_size: int = 1

    def __post_init__(self):
        if self.kind not in ("sequential", "simultaneous", "hybrid"):
            raise ValueError(f"unknown removal regime {self.kind!r}")
        if self.group_size < 1:
            raise ValueError("group size must be >= 1")
        if self.kind == "sequential" and self.group_size != 1:
            raise ValueError("sequential removal uses groups of one")

    def size(self, n_targets: int) -> int:
        if self.kind == "simultaneous":
            return max(1, n_targets)
        return self.group_size


@dataclass(frozen=True)
class AttackPlan:
    strategy: Strategy = Strategy.RANDOM
    attack_type: AttackType = AttackType.FIXED
    regime: Regime = field(default_factory=Regime)
    n_targets: int | None = None  # None: every node
    seed: int | None = None
    element: str = "node"

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "attack_type", AttackType(self.attack_type))
        if self.element != "node":
            raise ValueError("only node attacks are supported")
        if self.n_targets is not None and self.n_targets < 1:
            raise ValueError("n_targets must be >= 1")

    def validate_for(self, grid: PowerGrid) -> None:
        n = grid.n_buses
        if self.n_targets is not None and self.n_targets > n:
            raise ValueError(f"n_targets {self.n_targets} exceeds {n} nodes")
        if self.regime.kind == "hybrid" and self.regime.group_size > n:
            raise ValueError("group size exceeds node count")


# ------------------------------------------------------------------ rankings


def _order(ids: Sequence[str], score: np.ndarray) -> list[str]:
    # 12 significant digits so float noise cannot break exact ties
    rounded = [float(f"{s:.12g}") for s in score]
    return [ids[i] for i in sorted(range(len(ids)), key=lambda i: (-rounded[i], ids[i]))]


def entropic_degree(grid: PowerGrid, weights: np.ndarray) -> np.ndarray:
    """``(1 - sum_j p_ij ln p_ij) * sum_j w_ij`` with ``p_ij = w_ij / sum_j w_ij``.

    Each incident line is a separate term, so parallel lines count twice.
    """
    w = np.asarray(weights, float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("entropic degree needs finite non-negative weights")
    n = grid.n_buses
    frm, to = grid.line_from, grid.line_to
    strength = np.bincount(frm, w, n) + np.bincount(to, w, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        pf = np.where(strength[frm] > 0, w / strength[frm], 0.0)
        pt = np.where(strength[to] > 0, w / strength[to], 0.0)
        tf = np.where(pf > 0, pf * np.log(pf), 0.0)
        tt = np.where(pt > 0, pt * np.log(pt), 0.0)
    plogp = np.bincount(frm, tf, n) + np.bincount(to, tt, n)
    return (1.0 - plogp) * strength


def _graph(grid: PowerGrid, electrical: bool):
    import networkx as nx

    g = nx.Graph()
    g.add_nodes_from(grid.bus_ids)
    for l in grid.lines:
        if g.has_edge(l.from_bus, l.to_bus):
            g[l.from_bus][l.to_bus]["b"] += l.susceptance
        else:
            g.add_edge(l.from_bus, l.to_bus, b=l.susceptance)
    if electrical:
        for _, _, d in g.edges(data=True):
            d["x"] = 1.0 / d["b"]  # parallel lines combine as susceptances add
    return g


def rank_nodes(
    grid: PowerGrid,
    flows: FlowState | None = None,
    limits: LimitSet | None = None,
    strategy: Strategy | str = Strategy.DEGREE,
    seed: int | None = None,
) -> list[str]:
    """Attack order over all buses of ``grid``, most important first."""
    import networkx as nx

    strategy = Strategy(strategy)
    ids = grid.bus_ids
    if strategy is Strategy.RANDOM:
        perm = np.random.default_rng(seed).permutation(len(ids))
        return [ids[i] for i in perm]
    if strategy is Strategy.DEGREE:
        deg = np.bincount(grid.line_from, minlength=grid.n_buses) + np.bincount(
            grid.line_to, minlength=grid.n_buses
        )
        return _order(ids, deg.astype(float))
    if strategy in (Strategy.BETWEENNESS, Strategy.ELECTRICAL_CENTRALITY):
        electrical = strategy is Strategy.ELECTRICAL_CENTRALITY
        bc = nx.betweenness_centrality(_graph(grid, electrical), weight="x" if electrical else None)
        return _order(ids, np.array([bc[i] for i in ids]))
    if strategy is Strategy.ENTROPIC_DEGREE_FLOW:
        if flows is None:
            raise ValueError("entropic degree (flow) needs initial flows")
        if tuple(flows.line_ids) != tuple(grid.line_ids):
            raise ValueError("flows do not match the grid's lines")
        return _order(ids, entropic_degree(grid, np.abs(flows.flows)))
    if limits is None:
        raise ValueError("entropic degree (limit) needs line limits")
    if tuple(limits.line_ids) != tuple(grid.line_ids):
        raise ValueError("limits do not match the grid's lines")
    if not np.all(np.isfinite(limits.limits)):
        raise ValueError("entropic degree (limit) is undefined for unbounded limits")
    return _order(ids, entropic_degree(grid, limits.limits))


# ----------------------------------------------------------------- schedules


class FixedSchedule:
    """Precomputed target vector; targets lost earlier are skipped."""

    def __init__(self, order_idx: Sequence[int], group: int = 1):
        self.order = [int(i) for i in order_idx]
        self.group = group
        self._pos = 0

    @classmethod
    def from_ids(cls, grid: PowerGrid, order: Sequence[str], group: int = 1) -> "FixedSchedule":
        idx = []
        for b in order:
            if b not in grid:
                raise ValueError(f"unknown node {b!r} in attack order")
            idx.append(grid.bus_index(b))
        return cls(idx, group)

    def next_targets(self, state) -> list[int]:
        out = []
        alive = state.bus_alive
        while self._pos < len(self.order) and len(out) < self.group:
            i = self.order[self._pos]
            self._pos += 1
            if alive[i] and i not in out:
                out.append(i)
        return out


class FlexibleSchedule(FixedSchedule):
    """Walks the full order until ``n_targets`` removals have been made."""

    def __init__(self, order_idx: Sequence[int], n_targets: int, group: int = 1):
        super().__init__(order_idx, group)
        self.remaining = n_targets

    def next_targets(self, state) -> list[int]:
        if self.remaining <= 0:
            return []
        saved = self.group
        self.group = min(self.group, self.remaining)
        out = super().next_targets(state)
        self.group = saved
        self.remaining -= len(out)
        return out


class AdaptiveSchedule:
    """Re-ranks the surviving grid before every round."""

    def __init__(self, strategy: Strategy, n_targets: int, group: int = 1, seed: int | None = None):
        self.strategy = Strategy(strategy)
        self.remaining = n_targets
        self.group = group
        self.rounds = 0
        self.seed = seed

    def next_targets(self, state) -> list[int]:
        if self.remaining <= 0 or not state.bus_alive.any():
            return []
        sub = state.surviving_grid()
        seed = None if self.seed is None else (self.seed, self.rounds)
        rng_seed = None if seed is None else np.random.SeedSequence(list(seed))
        ranking = rank_nodes(
            sub,
            state.flow_state() if self.strategy is Strategy.ENTROPIC_DEGREE_FLOW else None,
            state.surviving_limits() if self.strategy is Strategy.ENTROPIC_DEGREE_LIMIT else None,
            self.strategy,
            seed=rng_seed,
        )
        self.rounds += 1
        take = ranking[: min(self.group, self.remaining)]
        self.remaining -= len(take)
        return [state.grid.bus_index(b) for b in take]


def make_plan(
    plan: AttackPlan,
    grid: PowerGrid,
    flows: FlowState | None = None,
    limits: LimitSet | None = None,
):
    """Removal schedule for ``plan`` on the intact ``grid``."""
    plan.validate_for(grid)
    n = plan.n_targets if plan.n_targets is not None else grid.n_buses
    group = plan.regime.size(n)
    if plan.attack_type is AttackType.ADAPTIVE:
        return AdaptiveSchedule(plan.strategy, n, group, plan.seed)
    order = rank_nodes(grid, flows, limits, plan.strategy, seed=plan.seed)
    idx = [grid.bus_index(b) for b in order]
    if plan.attack_type is AttackType.FIXED:
        return FixedSchedule(idx[:n], group)
    return FlexibleSchedule(idx, n, group)


def plan_to_json(plan: AttackPlan, order: Sequence[str] | None = None) -> str:
    doc = {
        "strategy": plan.strategy.value,
        "attack_type": plan.attack_type.value,
        "regime": {"kind": plan.regime.kind, "group_size": plan.regime.group_size},
        "n_targets": plan.n_targets,
        "seed": plan.seed,
        "order": list(order) if order is not None else None,
    }
    return json.dumps(doc, sort_keys=True)


def plan_from_json(text: str) -> tuple[AttackPlan, list[str] | None]:
    doc = json.loads(text)
    plan = AttackPlan(
        strategy=doc["strategy"],
        attack_type=doc["attack_type"],
        regime=Regime(**doc["regime"]),
        n_targets=doc.get("n_targets"),
        seed=doc.get("seed"),
    )
    return plan, doc.get("order")
