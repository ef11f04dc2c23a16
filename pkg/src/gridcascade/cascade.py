"""Sequential node-removal attack with DC overload cascades.

Each round removes the next target(s), then repeats until quiescent: drop
islands lacking either load or generation, rebalance each island pro rata,
solve DC flows, and trip every line whose flow strictly exceeds its limit.
Only islands touched by the round are re-solved; untouched islands keep their
(already quiescent) flows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .dcflow import FlowState, components_of, solve_islands
from .grid import PowerGrid, balance, slack_indices
from .limits import LimitSet

__all__ = [
    "GridState",
    "InvariantError",
    "Physics",
    "RoundRecord",
    "SimulationError",
    "SimulationTrace",
    "attack_the_grid",
    "damage_metrics",
    "rebalance",
]

BALANCE_TOL = 1e-6
ALPHA_FLOW_EPS = 1e-9


class Physics(str, Enum):
    CASCADING_DC = "dc"
    TOPOLOGICAL = "topological"


class SimulationError(RuntimeError):
    """A simulation aborted; ``trace`` holds the rounds completed so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class InvariantError(AssertionError):
    pass


@dataclass(frozen=True)
class RoundRecord:
    round: int
    targets: tuple[str, ...]
    lost: tuple[str, ...]  # lost to cascade or islanding this round
    tripped: tuple[tuple[str, int], ...]  # (line id, cascade iteration)
    giant_component_damage: float
    blackout_damage: float


@dataclass(frozen=True)
class SimulationTrace:
    limits: str
    physics: str
    records: tuple[RoundRecord, ...]
    initially_lost: tuple[str, ...] = ()
    # rows: round 0 (pre-attack) .. R; columns: mean alpha, mean load level
    alpha_stats: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def n_rounds(self) -> int:
        return len(self.records)

    def damage(self, metric: str = "blackout") -> np.ndarray:
        attr = {"blackout": "blackout_damage", "giant": "giant_component_damage"}[metric]
        return np.array([getattr(r, attr) for r in self.records], float)

    def targeted(self) -> set[str]:
        return {t for r in self.records for t in r.targets}

    def loss_rounds(self) -> dict[str, int]:
        """Round in which every node disappeared (targeted or not)."""
        out = {}
        for r in self.records:
            for b in r.targets:
                out[b] = r.round
            for b in r.lost:
                out[b] = r.round
        return out

    def cascade_loss_rounds(self) -> dict[str, int]:
        return {b: r.round for r in self.records for b in r.lost}


class GridState:
    """Mutable working copy of a grid during one simulation."""

    def __init__(self, grid: PowerGrid, limits: LimitSet):
        if limits.line_ids != tuple(grid.line_ids):
            raise ValueError("limit set does not match the grid's lines")
        self.grid = grid
        self.limits_set = limits
        self.limits = np.asarray(limits.limits, float)
        n, m = grid.n_buses, grid.n_lines
        self.bus_alive = np.ones(n, bool)
        self.line_alive = np.ones(m, bool)
        self.comp = np.array(grid.component_labels, np.int64)
        self._next_comp = grid.n_components
        self.served = np.zeros(n)
        self.dispatch = np.zeros(n)
        self.flows = np.zeros(m)

    # -- views
    @property
    def n_alive(self) -> int:
        return int(self.bus_alive.sum())

    def surviving_bus_ids(self) -> list[str]:
        ids = self.grid.bus_ids
        return [ids[i] for i in np.flatnonzero(self.bus_alive)]

    def surviving_line_ids(self) -> list[str]:
        ids = self.grid.line_ids
        return [ids[j] for j in np.flatnonzero(self.line_alive)]

    def surviving_grid(self) -> PowerGrid:
        return self.grid.restrict(self.surviving_bus_ids(), self.surviving_line_ids())

    def flow_state(self) -> FlowState:
        """Flows and injections of the surviving grid (ordered as ``surviving_grid``)."""
        lines = np.flatnonzero(self.line_alive)
        buses = np.flatnonzero(self.bus_alive)
        ids = self.grid.line_ids
        p = self.dispatch[buses] - self.served[buses]
        return FlowState(tuple(ids[j] for j in lines), self.flows[lines].copy(), p, 0.0)

    def surviving_limits(self) -> LimitSet:
        lines = np.flatnonzero(self.line_alive)
        ls = self.limits_set
        return LimitSet(ls.method, [ls.line_ids[j] for j in lines], self.limits[lines], ls.alpha)

    def giant_component_size(self) -> int:
        if not self.bus_alive.any():
            return 0
        _, counts = np.unique(self.comp[self.bus_alive], return_counts=True)
        return int(counts.max())

    # -- mutation
    def kill_buses(self, idx) -> None:
        idx = np.asarray(idx, np.int64)
        self.bus_alive[idx] = False
        self.served[idx] = 0.0
        self.dispatch[idx] = 0.0
        self.comp[idx] = -1
        g = self.grid
        dead_lines = self.line_alive & ~(self.bus_alive[g.line_from] & self.bus_alive[g.line_to])
        self.line_alive[dead_lines] = False
        self.flows[dead_lines] = 0.0

    def kill_lines(self, idx) -> None:
        self.line_alive[idx] = False
        self.flows[idx] = 0.0

    def new_component_ids(self, k: int) -> np.ndarray:
        ids = np.arange(self._next_comp, self._next_comp + k)
        self._next_comp += k
        return ids


def rebalance(state: GridState) -> GridState:
    """Pro-rata dispatch and service within every surviving island.

    Islands lacking demand or capacity are de-energized (all service zero)
    but not removed; removal is the engine's job.
    """
    g = state.grid
    buses = np.flatnonzero(state.bus_alive)
    loc = np.full(g.n_buses, -1)
    loc[buses] = np.arange(len(buses))
    lines = np.flatnonzero(state.line_alive)
    k, lab = components_of(len(buses), loc[g.line_from[lines]], loc[g.line_to[lines]])
    served, disp, _ = balance(g.demand[buses], g.capacity[buses], lab, k)
    state.served[buses] = served
    state.dispatch[buses] = disp
    state.comp[buses] = state.new_component_ids(k)[lab]
    return state


def _baseline(grid: PowerGrid) -> tuple[int, float]:
    if grid.n_buses == 0:
        return 0, 0.0
    giant = int(np.bincount(grid.component_labels).max())
    return giant, float(grid.served_demand().sum())


def damage_metrics(state: GridState, baseline: PowerGrid) -> tuple[float, float]:
    """``1 - P_x / P_1`` for giant-component size and served MW."""
    giant0, served0 = _baseline(baseline)
    if giant0 == 0 or served0 <= 0:
        raise ValueError("baseline grid has no giant component or no served demand")
    return (
        1.0 - state.giant_component_size() / giant0,
        max(0.0, 1.0 - float(state.served.sum()) / served0),
    )


def _settle(state: GridState, dirty: np.ndarray, dc: bool, trips: bool):
    """Drive the dirty region to quiescence; return (lost buses, tripped lines)."""
    g = state.grid
    lost: list[np.ndarray] = []
    tripped: list[tuple[int, int]] = []
    frm_all, to_all = g.line_from, g.line_to
    it = 0
    while True:
        it += 1
        buses = np.flatnonzero(dirty & state.bus_alive)
        if len(buses) == 0:
            break
        loc = np.full(g.n_buses, -1)
        loc[buses] = np.arange(len(buses))
        lines = np.flatnonzero(state.line_alive & (loc[frm_all] >= 0))
        frm, to = loc[frm_all[lines]], loc[to_all[lines]]
        k, lab = components_of(len(buses), frm, to)
        served, disp, energized = balance(g.demand[buses], g.capacity[buses], lab, k)
        dead = ~energized[lab]
        if dead.any():
            lost.append(buses[dead])
            state.kill_buses(buses[dead])
            live_comp = np.flatnonzero(energized)
            remap = np.full(k, -1)
            remap[live_comp] = np.arange(len(live_comp))
            keep = ~dead
            buses, lab, served, disp = buses[keep], remap[lab[keep]], served[keep], disp[keep]
            k = len(live_comp)
            line_keep = state.line_alive[lines]
            lines = lines[line_keep]
            loc[:] = -1
            loc[buses] = np.arange(len(buses))
            frm, to = loc[frm_all[lines]], loc[to_all[lines]]
        state.served[buses] = served
        state.dispatch[buses] = disp
        state.comp[buses] = state.new_component_ids(k)[lab]
        if not dc or len(buses) == 0:
            break
        slack = slack_indices(g.capacity[buses], g.id_rank[buses], lab, k)
        f, _ = solve_islands(frm, to, g.susceptance[lines], disp - served, lab, slack)
        state.flows[lines] = f
        if not trips:
            break
        over = np.abs(f) > state.limits[lines]
        if not over.any():
            break
        hit = lines[over]
        tripped.extend((int(j), it) for j in hit)
        state.kill_lines(hit)
    lost_idx = np.concatenate(lost) if lost else np.zeros(0, np.int64)
    return lost_idx, tripped


def _alpha_row(state: GridState) -> tuple[float, float]:
    sel = state.line_alive & np.isfinite(state.limits)
    absf = np.abs(state.flows[sel])
    lim = state.limits[sel]
    ok = absf >= ALPHA_FLOW_EPS
    if not ok.any():
        return float("nan"), float("nan")
    return float(np.mean(lim[ok] / absf[ok])), float(np.mean(absf[ok] / lim[ok]))


def _check_invariants(state: GridState, dc: bool) -> None:
    alive = state.bus_alive
    if alive.any():
        c = state.comp[alive]
        uniq, inv = np.unique(c, return_inverse=True)
        gap = np.bincount(inv, state.dispatch[alive] - state.served[alive], len(uniq))
        if np.max(np.abs(gap)) > BALANCE_TOL:
            raise InvariantError(f"island imbalance {np.max(np.abs(gap)):.3e} MW")
    if dc:
        sel = state.line_alive
        if np.any(np.abs(state.flows[sel]) > state.limits[sel]):
            raise InvariantError("overloaded line survived a quiescent state")


def attack_the_grid(
    grid: PowerGrid,
    limits: LimitSet,
    order,
    physics: Physics | str = Physics.CASCADING_DC,
    *,
    record_alpha: bool = False,
) -> SimulationTrace:
    """Run one attack to completion.

    ``order`` is either a sequence of bus ids (fixed, sequential attack:
    targets already lost to a cascade are skipped) or a schedule object from
    :func:`gridcascade.strategies.make_plan`. The run ends when the grid is
    empty or the schedule is exhausted.
    """
    from .strategies import FixedSchedule

    physics = Physics(physics)
    dc = physics is Physics.CASCADING_DC
    if not hasattr(order, "next_targets"):
        order = FixedSchedule.from_ids(grid, order)
    giant0, served0 = _baseline(grid)
    if giant0 == 0 or served0 <= 0:
        raise ValueError("grid has nothing to attack (no served demand)")

    state = GridState(grid, limits)
    ids = grid.bus_ids
    line_ids = grid.line_ids
    records: list[RoundRecord] = []
    alpha_rows = []
    record_alpha = record_alpha and dc

    def partial(msg, exc):
        trace = SimulationTrace(limits.name, physics.value, tuple(records), initially_lost)
        return SimulationError(msg, trace)

    initially_lost: tuple[str, ...] = ()
    lost0, _ = _settle(state, np.ones(grid.n_buses, bool), dc, trips=False)
    initially_lost = tuple(ids[i] for i in lost0)
    if record_alpha:
        alpha_rows.append(_alpha_row(state))

    rnd = 0
    while state.bus_alive.any():
        targets = [int(t) for t in order.next_targets(state)]
        if not targets:
            break
        rnd += 1
        t_idx = np.array(targets, np.int64)
        dirty = state.bus_alive & np.isin(state.comp, state.comp[t_idx])
        state.kill_buses(t_idx)
        try:
            lost, tripped = _settle(state, dirty, dc, trips=True)
            _check_invariants(state, dc)
        except Exception as exc:  # noqa: BLE001 - re-raised with the partial trace
            raise partial(f"round {rnd}: {exc}", exc) from exc
        giant = 1.0 - state.giant_component_size() / giant0
        blackout = max(0.0, 1.0 - float(state.served.sum()) / served0)
        records.append(
            RoundRecord(
                rnd,
                tuple(ids[i] for i in targets),
                tuple(ids[i] for i in lost),
                tuple((line_ids[j], it) for j, it in tripped),
                giant,
                blackout,
            )
        )
        if record_alpha:
            alpha_rows.append(_alpha_row(state))
    stats = np.array(alpha_rows, float).reshape(-1, 2) if record_alpha else None
    return SimulationTrace(limits.name, physics.value, tuple(records), initially_lost, stats)
