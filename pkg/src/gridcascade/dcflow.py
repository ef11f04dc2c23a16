"""Linearised (DC) load flow solved island by island.

Flows follow ``f = C A (A^T C A)^{-1} p`` with ``A`` the oriented line-bus
incidence (slack column removed) and ``C`` the diagonal of line
susceptances. Positive flow runs from ``from_bus`` to ``to_bus``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .grid import PowerGrid, slack_indices

__all__ = [
    "DCSystem",
    "FlowState",
    "NumericalError",
    "build_system",
    "select_slack",
    "solve_flows",
]

BALANCE_TOL = 1e-6
RESIDUAL_TOL = 1e-8
_DENSE_MAX = 48


class NumericalError(ArithmeticError):
    """The reduced Laplacian could not be factorised or the solve is inaccurate."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


@dataclass(frozen=True)
class FlowState:
    """Solved snapshot: signed MW flow per line and the injections used."""

    line_ids: tuple[str, ...]
    flows: np.ndarray
    injections: np.ndarray
    residual: float

    def flow(self, line_id: str) -> float:
        return float(self.flows[self.line_ids.index(line_id)])


class DCSystem(NamedTuple):
    incidence: sp.csr_matrix  # lines x non-slack buses, entries +1 (from) / -1 (to)
    susceptance: sp.dia_matrix
    slack: str
    bus_ids: list[str]  # column order of ``incidence``
    line_ids: list[str]  # row order


def select_slack(grid: PowerGrid, component: Sequence[str]) -> str:
    """Largest generation capacity in the component, ties to the smallest id."""
    cands = [grid.bus(b) for b in component if grid.bus(b).generation_capacity > 0]
    if not cands:
        raise ValueError("no slack candidate: component has no generation capacity")
    best = max(c.generation_capacity for c in cands)
    return min(c.id for c in cands if c.generation_capacity == best)


def build_system(grid: PowerGrid, component: Sequence[str]) -> DCSystem:
    comp = set(component)
    slack = select_slack(grid, comp)
    cols = [b for b in grid.bus_ids if b in comp and b != slack]
    col = {b: k for k, b in enumerate(cols)}
    lines = [l for l in grid.lines if l.from_bus in comp and l.to_bus in comp]
    rows, cidx, vals = [], [], []
    for r, l in enumerate(lines):
        for bus, sign in ((l.from_bus, 1.0), (l.to_bus, -1.0)):
            if bus in col:
                rows.append(r)
                cidx.append(col[bus])
                vals.append(sign)
    a = sp.csr_matrix((vals, (rows, cidx)), shape=(len(lines), len(cols)))
    c = sp.diags(np.array([l.susceptance for l in lines], float), format="dia")
    return DCSystem(a, c, slack, cols, [l.id for l in lines])


def _factor_solve(lap, rhs):
    n = lap.shape[0]
    if n == 0:
        return np.zeros(0)
    if isinstance(lap, np.ndarray):
        factor = sla.cho_factor(lap, lower=True, check_finite=False)
        return sla.cho_solve(factor, rhs, check_finite=False)
    # symmetric mode with no off-diagonal pivoting keeps the factorisation
    # symmetric (LDL^T under a fill-reducing symmetric permutation)
    lu = splu(
        lap,
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )
    return lu.solve(rhs)


def solve_islands(frm, to, b, p, labels, slack):
    """Solve every island of a (local) bus set in one block-diagonal system.

    ``frm``/``to`` are local bus indices of the lines, ``labels`` the local
    component of each bus and ``slack[c]`` the slack bus of component ``c``.
    Returns ``(flows, residual)`` where the residual is the infinity norm of
    KCL over non-slack buses.
    """
    n = len(p)
    if n == 0:
        return np.zeros(0), 0.0
    is_slack = np.zeros(n, bool)
    is_slack[slack] = True
    keep = np.flatnonzero(~is_slack)
    if len(frm) == 0 or len(keep) == 0:
        flows = np.zeros(len(frm))
        res = float(np.max(np.abs(p[keep]), initial=0.0))
        return flows, res
    pos = np.full(n, -1)
    pos[keep] = np.arange(len(keep))
    pf, pt = pos[frm], pos[to]
    diag = np.bincount(frm, b, n) + np.bincount(to, b, n)
    both = (pf >= 0) & (pt >= 0)
    if len(keep) <= _DENSE_MAX:
        lap = np.diag(diag[keep])
        np.add.at(lap, (pf[both], pt[both]), -b[both])
        np.add.at(lap, (pt[both], pf[both]), -b[both])
    else:
        rows = np.concatenate([pos[keep], pf[both], pt[both]])
        cols = np.concatenate([pos[keep], pt[both], pf[both]])
        vals = np.concatenate([diag[keep], -b[both], -b[both]])
        lap = sp.csc_matrix((vals, (rows, cols)), shape=(len(keep), len(keep)))
    try:
        theta_red = _factor_solve(lap, p[keep])
    except (np.linalg.LinAlgError, sla.LinAlgError, RuntimeError) as exc:
        raise NumericalError(
            f"reduced Laplacian is singular: {exc}", component=np.unique(labels).tolist()
        ) from exc
    theta = np.zeros(n)
    theta[keep] = theta_red
    flows = b * (theta[frm] - theta[to])
    kcl = np.bincount(frm, flows, n) - np.bincount(to, flows, n) - p
    res = float(np.max(np.abs(kcl[keep]), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(p), initial=0.0)))
    if not np.all(np.isfinite(flows)) or res > RESIDUAL_TOL * scale:
        worst = int(labels[keep[np.argmax(np.abs(kcl[keep]))]]) if np.all(np.isfinite(kcl)) else None
        raise NumericalError(f"DC flow residual {res:.3e} exceeds tolerance", component=worst)
    return flows, res


def solve_flows(grid: PowerGrid, injections=None) -> FlowState:
    """Solve DC flows for ``injections`` (default: the grid's own dispatch).

    Each connected component is solved independently. Components that are
    not energized (no demand or no generation capacity) carry zero flow and
    must have zero injections.
    """
    n = grid.n_buses
    p = grid.injections() if injections is None else np.asarray(injections, float)
    if p.shape != (n,):
        raise ValueError(f"expected {n} injections, got shape {p.shape}")
    labels, n_comp = grid.component_labels, grid.n_components
    if n == 0:
        return FlowState((), np.zeros(0), np.zeros(0), 0.0)
    sums = np.bincount(labels, p, n_comp)
    if np.any(np.abs(sums) > BALANCE_TOL):
        c = int(np.argmax(np.abs(sums)))
        raise ValueError(f"injections unbalanced by {sums[c]:.3e} MW in component {c}")
    live = grid.energized[labels]
    if np.any(p[~live] != 0):
        raise ValueError("nonzero injection in a de-energized component")
    slack = slack_indices(grid.capacity, grid.id_rank, labels, n_comp)
    bus_sel = np.flatnonzero(live)
    line_sel = np.flatnonzero(live[grid.line_from])
    loc = np.full(n, -1)
    loc[bus_sel] = np.arange(len(bus_sel))
    comp_map = np.full(n_comp, -1)
    live_comps = np.flatnonzero(grid.energized)
    comp_map[live_comps] = np.arange(len(live_comps))
    flows = np.zeros(grid.n_lines)
    f_live, res = solve_islands(
        loc[grid.line_from[line_sel]],
        loc[grid.line_to[line_sel]],
        grid.susceptance[line_sel],
        p[bus_sel],
        comp_map[labels[bus_sel]],
        loc[slack[live_comps]],
    )
    flows[line_sel] = f_live
    return FlowState(tuple(grid.line_ids), flows, p.copy(), res)


def components_of(n, frm, to):
    """Connected components of a local bus set: ``(count, labels)``."""
    if n == 0:
        return 0, np.zeros(0, np.int64)
    indptr = np.zeros(n + 1, np.int32)
    np.cumsum(np.bincount(frm, minlength=n), out=indptr[1:])
    order = np.argsort(frm, kind="stable")
    adj = sp.csr_matrix((np.ones(len(frm)), to[order].astype(np.int32), indptr), shape=(n, n))
    k, labels = connected_components(adj, directed=False)
    return k, labels
