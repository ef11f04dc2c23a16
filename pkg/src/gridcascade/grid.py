"""Grid data model, CSV ingestion and synthetic grid generation.

Reactances and susceptances are per-unit on an arbitrary common base; only
their ratios matter for DC flows. Power quantities are in MW.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree
from scipy.spatial import cKDTree

__all__ = [
    "Bus",
    "GridParseError",
    "GridValidationError",
    "Line",
    "PowerGrid",
    "SynthRecord",
    "SynthSpec",
    "TopologyStats",
    "VoltageClass",
    "build_grid",
    "grid_hash",
    "load_grid",
    "save_grid",
    "synth_grid",
    "topology_stats",
]

NODE_HEADER = ("id", "demand_mw", "generation_mw")


class GridValidationError(ValueError):
    """A grid element or the grid as a whole violates an invariant."""


class GridParseError(ValueError):
    """A CSV row could not be parsed."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class VoltageClass(IntEnum):
    V132 = 132
    V275 = 275
    V400 = 400

    @classmethod
    def parse(cls, value) -> "VoltageClass":
        try:
            return cls(int(float(value)))
        except ValueError:
            raise GridValidationError(f"unsupported voltage class {value!r}") from None


def _finite_nonneg(name, value, owner):
    if not (math.isfinite(value) and value >= 0):
        raise GridValidationError(f"{owner}: {name} must be finite and >= 0, got {value!r}")


@dataclass(frozen=True)
class Bus:
    id: str
    demand: float
    generation_capacity: float
    dispatched_generation: float = 0.0
    voltage_class: VoltageClass = VoltageClass.V132

    def __post_init__(self):
        if not self.id:
            raise GridValidationError("bus id must be a non-empty string")
        owner = f"bus {self.id}"
        _finite_nonneg("demand", self.demand, owner)
        _finite_nonneg("generation_capacity", self.generation_capacity, owner)
        _finite_nonneg("dispatched_generation", self.dispatched_generation, owner)
        if self.dispatched_generation > self.generation_capacity:
            raise GridValidationError(f"{owner}: dispatched generation exceeds capacity")


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    susceptance: float
    voltage_class: VoltageClass = VoltageClass.V132
    real_limit: float | None = None

    def __post_init__(self):
        if not self.id:
            raise GridValidationError("line id must be a non-empty string")
        if self.from_bus == self.to_bus:
            raise GridValidationError(f"line {self.id}: self-loop at bus {self.from_bus}")
        if not (math.isfinite(self.susceptance) and self.susceptance > 0):
            raise GridValidationError(
                f"line {self.id}: susceptance must be finite and > 0, got {self.susceptance!r}"
            )
        if self.real_limit is not None and not (
            math.isfinite(self.real_limit) and self.real_limit > 0
        ):
            raise GridValidationError(
                f"line {self.id}: real limit must be finite and > 0, got {self.real_limit!r}"
            )


def _readonly(a):
    a = np.asarray(a)
    a.flags.writeable = False
    return a


def balance(demand, capacity, labels, n_comp):
    """Pro-rata balancing of generation and demand within each component.

    Returns ``(served, dispatch, energized)`` where ``energized`` is per
    component. A component needs nonzero demand and nonzero capacity to be
    energized; otherwise everything in it is switched off.
    """
    dem = np.bincount(labels, demand, n_comp)
    cap = np.bincount(labels, capacity, n_comp)
    energized = (dem > 0) & (cap > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        serve_frac = np.where(energized, np.minimum(1.0, cap / dem), 0.0)
        disp_frac = np.where(energized, np.minimum(1.0, dem / cap), 0.0)
    return demand * serve_frac[labels], capacity * disp_frac[labels], energized


def slack_indices(capacity, id_rank, labels, n_comp):
    """Slack bus per component: largest capacity, ties to the smallest id."""
    order = np.lexsort((id_rank, -capacity, labels))
    first = np.ones(len(order), bool)
    first[1:] = labels[order][1:] != labels[order][:-1]
    slack = np.full(n_comp, -1)
    slack[labels[order][first]] = order[first]
    return slack


class PowerGrid:
    """Immutable, validated set of buses and lines.

    Numeric views (``demand``, ``line_from``, ...) are read-only arrays
    aligned with ``buses`` and ``lines``.
    """

    __slots__ = (
        "_buses", "_lines", "_bus_index", "_line_index", "demand", "capacity",
        "dispatch", "id_rank", "line_from", "line_to", "susceptance",
        "line_voltage", "real_limits", "component_labels", "n_components",
        "energized",
    )

    def __init__(self, buses: Iterable[Bus], lines: Iterable[Line]):
        buses = tuple(buses)
        lines = tuple(lines)
        bus_index = {}
        for i, bus in enumerate(buses):
            if bus.id in bus_index:
                raise GridValidationError(f"duplicate bus id {bus.id}")
            bus_index[bus.id] = i
        line_index = {}
        for j, line in enumerate(lines):
            if line.id in line_index:
                raise GridValidationError(f"duplicate line id {line.id}")
            for end in (line.from_bus, line.to_bus):
                if end not in bus_index:
                    raise GridValidationError(f"unknown bus {end} on line {line.id}")
            line_index[line.id] = j
        set_ = object.__setattr__
        set_(self, "_buses", buses)
        set_(self, "_lines", lines)
        set_(self, "_bus_index", bus_index)
        set_(self, "_line_index", line_index)
        n = len(buses)
        set_(self, "demand", _readonly(np.array([b.demand for b in buses], float)))
        set_(self, "capacity", _readonly(np.array([b.generation_capacity for b in buses], float)))
        set_(self, "dispatch", _readonly(np.array([b.dispatched_generation for b in buses], float)))
        rank = np.empty(n, dtype=np.int64)
        rank[sorted(range(n), key=lambda i: buses[i].id)] = np.arange(n)
        set_(self, "id_rank", _readonly(rank))
        set_(self, "line_from", _readonly(np.array([bus_index[l.from_bus] for l in lines], np.int64)))
        set_(self, "line_to", _readonly(np.array([bus_index[l.to_bus] for l in lines], np.int64)))
        set_(self, "susceptance", _readonly(np.array([l.susceptance for l in lines], float)))
        set_(self, "line_voltage", _readonly(np.array([int(l.voltage_class) for l in lines], np.int64)))
        set_(self, "real_limits", _readonly(np.array(
            [np.nan if l.real_limit is None else l.real_limit for l in lines], float)))
        n_comp, labels = _components(n, self.line_from, self.line_to)
        set_(self, "component_labels", _readonly(labels))
        set_(self, "n_components", n_comp)
        dem = np.bincount(labels, self.demand, n_comp)
        cap = np.bincount(labels, self.capacity, n_comp)
        set_(self, "energized", _readonly((dem > 0) & (cap > 0)))

    def __setattr__(self, name, value):
        raise AttributeError("PowerGrid is immutable")

    @property
    def buses(self) -> tuple[Bus, ...]:
        return self._buses

    @property
    def lines(self) -> tuple[Line, ...]:
        return self._lines

    @property
    def bus_ids(self) -> list[str]:
        return [b.id for b in self._buses]

    @property
    def line_ids(self) -> list[str]:
        return [l.id for l in self._lines]

    @property
    def n_buses(self) -> int:
        return len(self._buses)

    @property
    def n_lines(self) -> int:
        return len(self._lines)

    def bus_index(self, bus_id: str) -> int:
        return self._bus_index[bus_id]

    def line_index(self, line_id: str) -> int:
        return self._line_index[line_id]

    def bus(self, bus_id: str) -> Bus:
        return self._buses[self._bus_index[bus_id]]

    def line(self, line_id: str) -> Line:
        return self._lines[self._line_index[line_id]]

    def __contains__(self, bus_id) -> bool:
        return bus_id in self._bus_index

    @property
    def has_real_limits(self) -> bool:
        return bool(self.n_lines) and bool(np.all(np.isfinite(self.real_limits)))

    @property
    def deenergized_buses(self) -> list[str]:
        """Buses in components lacking either demand or generation capacity."""
        mask = ~self.energized[self.component_labels]
        return [self._buses[i].id for i in np.flatnonzero(mask)]

    @property
    def slack_buses(self) -> list[str]:
        """One slack bus per energized component."""
        slack = slack_indices(self.capacity, self.id_rank, self.component_labels, self.n_components)
        return [self._buses[slack[c]].id for c in range(self.n_components) if self.energized[c]]

    def injections(self) -> np.ndarray:
        """Net injection per bus at the stored dispatch with balanced service."""
        served, _, _ = balance(self.demand, self.capacity, self.component_labels, self.n_components)
        return self.dispatch - served

    def served_demand(self) -> np.ndarray:
        served, _, _ = balance(self.demand, self.capacity, self.component_labels, self.n_components)
        return served

    def restrict(self, bus_ids: Iterable[str], line_ids: Iterable[str] | None = None) -> "PowerGrid":
        """Sub-grid on ``bus_ids``, re-dispatched as a grid of its own.

        Lines default to all lines inside the set.
        """
        keep = set(bus_ids)
        if line_ids is None:
            lines = [l for l in self._lines if l.from_bus in keep and l.to_bus in keep]
        else:
            wanted = set(line_ids)
            lines = [l for l in self._lines if l.id in wanted]
        return build_grid([b for b in self._buses if b.id in keep], lines)

    def __reduce__(self):
        return PowerGrid, (self._buses, self._lines)

    def __eq__(self, other):
        if not isinstance(other, PowerGrid):
            return NotImplemented
        return self._buses == other._buses and self._lines == other._lines

    def __hash__(self):
        return hash((self._buses, self._lines))

    def __repr__(self):
        return f"PowerGrid(buses={self.n_buses}, lines={self.n_lines})"


def _components(n, frm, to):
    if n == 0:
        return 0, np.zeros(0, np.int64)
    adj = sp.coo_matrix((np.ones(len(frm)), (frm, to)), shape=(n, n))
    n_comp, labels = connected_components(adj, directed=False)
    return n_comp, labels.astype(np.int64)


def build_grid(buses: Sequence[Bus], lines: Sequence[Line]) -> PowerGrid:
    """Assemble a grid, deriving bus voltage classes and the initial dispatch.

    Bus voltage class is the highest class of its incident lines (132 kV for
    isolated buses); dispatch is the pro-rata balance within each component.
    """
    raw = PowerGrid(buses, lines)
    volt = np.full(raw.n_buses, int(VoltageClass.V132))
    if raw.n_lines:
        np.maximum.at(volt, raw.line_from, raw.line_voltage)
        np.maximum.at(volt, raw.line_to, raw.line_voltage)
    _, dispatch, _ = balance(raw.demand, raw.capacity, raw.component_labels, raw.n_components)
    new_buses = [
        Bus(b.id, b.demand, b.generation_capacity, float(dispatch[i]), VoltageClass(int(volt[i])))
        for i, b in enumerate(raw.buses)
    ]
    return PowerGrid(new_buses, raw.lines)


# --------------------------------------------------------------------------- I/O


def _parse_float(path, lineno, column, text):
    try:
        return float(text)
    except (TypeError, ValueError):
        raise GridParseError(path, lineno, f"column {column!r}: not a number: {text!r}") from None


def _read_rows(path, required):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise GridParseError(path, 1, "empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise GridParseError(path, 1, f"missing columns {missing}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise GridParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            yield lineno, dict(zip(header, (c.strip() for c in row)))


def load_grid(nodes_file, edges_file) -> PowerGrid:
    """Read the nodes and edges CSV files into a validated grid."""
    buses = []
    for lineno, row in _read_rows(nodes_file, NODE_HEADER):
        demand = _parse_float(nodes_file, lineno, "demand_mw", row["demand_mw"])
        gen = _parse_float(nodes_file, lineno, "generation_mw", row["generation_mw"])
        buses.append(Bus(row["id"], demand, gen))

    with open(edges_file, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    header = [h.strip() for h in header]
    if "susceptance" in header:
        weight_col = "susceptance"
    elif "reactance" in header:
        weight_col = "reactance"
    else:
        raise GridParseError(edges_file, 1, "need a 'susceptance' or 'reactance' column")
    lines = []
    for lineno, row in _read_rows(edges_file, ("id", "from", "to", weight_col)):
        w = _parse_float(edges_file, lineno, weight_col, row[weight_col])
        if weight_col == "reactance":
            if not w > 0:
                raise GridValidationError(f"line {row['id']}: reactance must be > 0, got {w!r}")
            w = 1.0 / w
        volt = VoltageClass.V132
        if row.get("voltage_kv"):
            volt = VoltageClass.parse(row["voltage_kv"])
        limit = None
        if row.get("limit_mw"):
            limit = _parse_float(edges_file, lineno, "limit_mw", row["limit_mw"])
        lines.append(Line(row["id"], row["from"], row["to"], w, volt, limit))
    return build_grid(buses, lines)


def _fmt(x: float) -> str:
    return format(x, ".17g")


def _grid_csv_text(grid: PowerGrid) -> tuple[str, str]:
    nodes = io.StringIO()
    w = csv.writer(nodes, lineterminator="\n")
    w.writerow(NODE_HEADER)
    for b in grid.buses:
        w.writerow([b.id, _fmt(b.demand), _fmt(b.generation_capacity)])
    edges = io.StringIO()
    w = csv.writer(edges, lineterminator="\n")
    with_limits = any(l.real_limit is not None for l in grid.lines)
    header = ["id", "from", "to", "susceptance", "voltage_kv"] + (["limit_mw"] if with_limits else [])
    w.writerow(header)
    for l in grid.lines:
        row = [l.id, l.from_bus, l.to_bus, _fmt(l.susceptance), int(l.voltage_class)]
        if with_limits:
            row.append("" if l.real_limit is None else _fmt(l.real_limit))
        w.writerow(row)
    return nodes.getvalue(), edges.getvalue()


def save_grid(grid: PowerGrid, nodes_file, edges_file) -> None:
    nodes, edges = _grid_csv_text(grid)
    Path(nodes_file).write_text(nodes, encoding="utf-8")
    Path(edges_file).write_text(edges, encoding="utf-8")


def grid_hash(grid: PowerGrid) -> str:
    """SHA-256 over the canonical CSV serialisation."""
    nodes, edges = _grid_csv_text(grid)
    h = hashlib.sha256()
    h.update(nodes.encode())
    h.update(b"\0")
    h.update(edges.encode())
    return h.hexdigest()


# ---------------------------------------------------------------------- topology


@dataclass(frozen=True)
class TopologyStats:
    node_count: int
    edge_count: int
    mean_degree: float
    mean_unweighted_distance: float
    assortativity: float
    mean_clustering: float
    mean_normalized_betweenness: float


def topology_stats(grid: PowerGrid) -> TopologyStats:
    """Standard graph statistics.

    Degree counts parallel lines individually; distance, clustering,
    assortativity and betweenness use the simple projection. Mean distance
    is over connected pairs only. Assortativity is NaN when undefined
    (e.g. regular graphs).
    """
    import networkx as nx

    n, m = grid.n_buses, grid.n_lines
    if n == 0:
        return TopologyStats(0, 0, 0.0, 0.0, 0.0, 0.0, 0.0)
    g = nx.Graph()
    g.add_nodes_from(grid.bus_ids)
    g.add_edges_from((l.from_bus, l.to_bus) for l in grid.lines)

    total, pairs = 0, 0
    for _, dists in nx.all_pairs_shortest_path_length(g):
        total += sum(dists.values())
        pairs += len(dists) - 1
    mean_dist = total / pairs if pairs else 0.0

    try:
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            assort = float(nx.degree_assortativity_coefficient(g)) if g.number_of_edges() else 0.0
    except (ZeroDivisionError, ValueError):
        assort = float("nan")

    return TopologyStats(
        node_count=n,
        edge_count=m,
        mean_degree=2.0 * m / n,
        mean_unweighted_distance=float(mean_dist),
        assortativity=assort,
        mean_clustering=float(nx.average_clustering(g)),
        mean_normalized_betweenness=float(np.mean(list(nx.betweenness_centrality(g).values()))),
    )


# --------------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for :func:`synth_grid`.

    ``n_edges`` defaults to ``round(n_nodes * mean_degree / 2)``. Real limits
    are planted from exactly one of ``alpha`` (uniform proportional loading),
    ``alpha_range`` (per-line tolerance drawn uniformly) or ``linear_model``
    (``(intercept, flow, v275, v400)`` in thousands of MW, flow regressor in
    thousands of MW). Leave all three unset for a grid without real limits.
    """

    n_nodes: int = 512
    n_edges: int | None = None
    mean_degree: float = 2.73
    generator_share: float = 0.15
    demand_range: tuple[float, float] = (5.0, 150.0)
    capacity_margin: float = 1.3
    voltage_mix: Mapping[int, float] = field(
        default_factory=lambda: {132: 0.45, 275: 0.25, 400: 0.30}
    )
    susceptance_range: tuple[float, float] = (5.0, 50.0)
    neighbours: int = 30
    local_share: float = 0.25
    alpha: float | None = None
    alpha_range: tuple[float, float] | None = None
    linear_model: tuple[float, float, float, float] | None = None
    limit_noise: float = 0.0
    seed: int = 0

    def edge_count(self) -> int:
        if self.n_edges is not None:
            return int(self.n_edges)
        return int(round(self.n_nodes * self.mean_degree / 2))


@dataclass(frozen=True)
class SynthRecord:
    """Ground truth used when planting the real limits."""

    initial_flows: np.ndarray
    planted_alpha: np.ndarray  # per line; NaN for zero-flow lines or model planting
    spec: SynthSpec


LIMIT_FLOOR_MW = 1.0


def synth_grid(spec: SynthSpec, *, return_record: bool = False):
    """Random connected grid with a spatial (geometric) layout.

    Buses are points in the unit square joined by the Euclidean minimum
    spanning tree of their ``neighbours``-nearest-neighbour graph. Extra
    edges come from the same candidate set: the shortest ``local_share`` of
    them deterministically, the rest uniformly at random. With the defaults a
    512-bus, 698-line grid has mean distance around 14 and clustering around
    0.1.
    """
    n, m = int(spec.n_nodes), spec.edge_count()
    if n < 2:
        raise ValueError("need at least 2 nodes")
    if m < n - 1:
        raise ValueError(f"{m} edges cannot connect {n} nodes")
    if m > n * (n - 1) // 2:
        raise ValueError(f"{m} edges exceed a simple graph on {n} nodes (degree > n-1)")
    planting = [x is not None for x in (spec.alpha, spec.alpha_range, spec.linear_model)]
    if sum(planting) > 1:
        raise ValueError("choose at most one of alpha, alpha_range, linear_model")
    if spec.alpha is not None and not spec.alpha > 0:
        raise ValueError("alpha must be > 0")
    lo, hi = spec.demand_range
    if not (0 < lo <= hi) or not (0 < spec.generator_share < 1) or not spec.capacity_margin > 0:
        raise ValueError("demand range, generator share and capacity margin must be positive")

    rng = np.random.default_rng(spec.seed)
    pts = rng.random((n, 2))
    tree = cKDTree(pts)
    k = min(n - 1, spec.neighbours)
    dist, nbr = tree.query(pts, k + 1)
    rows = np.repeat(np.arange(n), k)
    cols = nbr[:, 1:].ravel()
    d = dist[:, 1:].ravel()
    cand = {}
    for a, b, w in zip(rows, cols, d):
        key = (min(a, b), max(a, b))
        cand[key] = w
    knn = sp.coo_matrix(
        ([cand[e] + 1e-12 for e in cand], ([e[0] for e in cand], [e[1] for e in cand])), shape=(n, n)
    )
    mst = minimum_spanning_tree(knn).tocoo()
    if mst.nnz != n - 1:  # kNN graph disconnected; fall back to the dense graph
        full = sp.csr_matrix(np.triu(np.linalg.norm(pts[:, None] - pts[None], axis=-1), 1) + 0.0)
        mst = minimum_spanning_tree(full).tocoo()
    edges = {(min(a, b), max(a, b)) for a, b in zip(mst.row, mst.col)}
    extra = sorted((w, e) for e, w in cand.items() if e not in edges)
    need = m - len(edges)
    if need > len(extra):
        all_pairs = [
            (float(np.linalg.norm(pts[a] - pts[b])), (a, b))
            for a in range(n) for b in range(a + 1, n) if (a, b) not in edges
        ]
        extra = sorted(all_pairs)
    # the shortest share of extra edges is taken deterministically, the rest at random
    short = int(need * spec.local_share)
    chosen = [e for _, e in extra[:short]]
    rest = [e for _, e in extra[short:]]
    if need - short:
        pick = rng.choice(len(rest), size=need - short, replace=False)
        chosen += [rest[i] for i in sorted(pick)]
    edges = sorted(edges | set(chosen))

    width = len(str(n - 1))
    ids = [f"B{i:0{width}d}" for i in range(n)]
    n_gen = max(1, int(round(spec.generator_share * n)))
    gen_idx = np.sort(rng.choice(n, size=n_gen, replace=False))
    is_gen = np.zeros(n, bool)
    is_gen[gen_idx] = True
    demand = np.where(is_gen, 0.0, rng.uniform(lo, hi, n))
    raw_cap = np.where(is_gen, rng.uniform(0.2, 1.0, n), 0.0)
    capacity = raw_cap / raw_cap.sum() * demand.sum() * spec.capacity_margin

    classes = sorted(spec.voltage_mix)
    probs = np.array([spec.voltage_mix[c] for c in classes], float)
    volts = rng.choice(classes, size=m, p=probs / probs.sum())
    blo, bhi = spec.susceptance_range
    scale = {132: 1.0, 275: 2.0, 400: 4.0}
    sus = rng.uniform(blo, bhi, m) * np.array([scale.get(int(v), 1.0) for v in volts])

    width_l = len(str(m - 1))
    lines = [
        Line(f"L{j:0{width_l}d}", ids[a], ids[b], float(sus[j]), VoltageClass(int(volts[j])))
        for j, (a, b) in enumerate(edges)
    ]
    buses = [Bus(ids[i], float(demand[i]), float(capacity[i])) for i in range(n)]
    grid = build_grid(buses, lines)

    from .dcflow import solve_flows

    flows = np.asarray(solve_flows(grid).flows)
    absf = np.abs(flows)
    planted = np.full(m, np.nan)
    limits = None
    if spec.alpha is not None:
        planted[absf > 0] = spec.alpha
        limits = np.where(absf > 0, spec.alpha * absf, max(spec.alpha * LIMIT_FLOOR_MW, LIMIT_FLOOR_MW))
    elif spec.alpha_range is not None:
        a_lo, a_hi = spec.alpha_range
        per_line = rng.uniform(a_lo, a_hi, m)
        planted[absf > 0] = per_line[absf > 0]
        limits = np.where(absf > 0, per_line * absf, np.maximum(per_line * LIMIT_FLOOR_MW, LIMIT_FLOOR_MW))
    elif spec.linear_model is not None:
        b0, bf, b275, b400 = spec.linear_model
        kmw = b0 + bf * absf / 1000.0 + b275 * (volts == 275) + b400 * (volts == 400)
        limits = np.maximum(kmw * 1000.0, LIMIT_FLOOR_MW)
    if limits is not None and spec.limit_noise:
        limits = limits * np.exp(rng.normal(0.0, spec.limit_noise, m))
    if limits is not None:
        lines = [
            Line(l.id, l.from_bus, l.to_bus, l.susceptance, l.voltage_class, float(limits[j]))
            for j, l in enumerate(grid.lines)
        ]
        grid = PowerGrid(grid.buses, lines)
    if return_record:
        return grid, SynthRecord(flows, planted, spec)
    return grid
