"""Monte Carlo batches over limit methods and their comparison analyses.

A batch replays the same attack orders under every limit method (paired
design), so differences between methods come from the limits alone.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .cascade import Physics, RoundRecord, SimulationError, SimulationTrace, attack_the_grid
from .dcflow import solve_flows
from .grid import PowerGrid
from .limits import PL, REAL, TOPOLOGICAL, LimitSet, proportional_limits, real_limits
from .strategies import TARGETED_STRATEGIES, AttackPlan, AttackType, Strategy, make_plan

__all__ = [
    "AlphaEstimate",
    "AlphaTrace",
    "BatchError",
    "DamageCurves",
    "LossOrderCorrelation",
    "StoreIntegrityError",
    "StrategyRankTable",
    "TraceStore",
    "alpha_trace",
    "alpha_traces",
    "damage_curves",
    "estimate_true_alpha",
    "loss_order_correlation",
    "rank_tables",
    "read_store",
    "run_batch",
    "spearman",
    "strategy_rank_rmse",
    "write_aggregates",
    "write_store",
]


class BatchError(RuntimeError):
    def __init__(self, method, strategy, sim, cause):
        super().__init__(f"cell (method={method}, strategy={strategy}, sim={sim}) failed: {cause}")
        self.method, self.strategy, self.sim = method, strategy, sim


class StoreIntegrityError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else format(x, ".17g")
    return str(x)


@dataclass
class TraceStore:
    """Traces keyed by ``(method, strategy, sim_id)``."""

    traces: dict[tuple[str, str, int], SimulationTrace] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def methods(self) -> list[str]:
        return list(dict.fromkeys(k[0] for k in self.traces))

    def strategies(self) -> list[str]:
        return list(dict.fromkeys(k[1] for k in self.traces))

    def cell(self, method: str, strategy: str = "random") -> list[SimulationTrace]:
        keys = sorted(k for k in self.traces if k[0] == method and k[1] == strategy)
        return [self.traces[k] for k in keys]

    def __len__(self):
        return len(self.traces)

    def __eq__(self, other):
        return isinstance(other, TraceStore) and self.traces == other.traces


# ---------------------------------------------------------------- batch runs


def sim_seed(seed: int, k: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(k)])


def _schedule(plan: AttackPlan, grid, flows, rank_limits, seed, k):
    if plan.strategy is Strategy.RANDOM:
        ss = sim_seed(seed, k)
        if plan.attack_type is AttackType.ADAPTIVE:
            ss = int(ss.generate_state(1)[0])  # adaptive schedules derive per-round streams
        plan = replace(plan, seed=ss)
    return make_plan(plan, grid, flows, rank_limits)


def _run_cell(args):
    grid, limits, plan, physics, seed, k, rank_limits, record_alpha = args
    flows = solve_flows(grid)
    cell_physics = Physics.TOPOLOGICAL if limits.method == TOPOLOGICAL else physics
    schedule = _schedule(plan, grid, flows, rank_limits, seed, k)
    try:
        return attack_the_grid(grid, limits, schedule, cell_physics, record_alpha=record_alpha)
    except (SimulationError, ValueError, ArithmeticError) as exc:
        raise BatchError(limits.name, plan.strategy.value, k, exc) from exc


def run_batch(
    grid: PowerGrid,
    limit_sets: Iterable[LimitSet],
    n_sims: int,
    seed: int = 0,
    *,
    plan: AttackPlan | None = None,
    physics: Physics | str = Physics.CASCADING_DC,
    rank_limits: LimitSet | None = None,
    record_alpha: bool = True,
    n_jobs: int = 1,
) -> TraceStore:
    """Simulate ``n_sims`` attacks under every limit set.

    Simulation ``k`` draws its random order from ``SeedSequence([seed, k])``
    and that order is replayed for every limit set. Non-random strategies
    rank the intact grid once using ``rank_limits`` (the real limits when the
    grid has them). Topological limit sets run with topological physics.
    Results do not depend on ``n_jobs``.
    """
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    plan = plan or AttackPlan()
    physics = Physics(physics)
    limit_sets = list(limit_sets)
    names = [ls.name for ls in limit_sets]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate limit methods in {names}")
    if rank_limits is None and plan.strategy is Strategy.ENTROPIC_DEGREE_LIMIT and grid.has_real_limits:
        rank_limits = real_limits(grid)
    jobs = [
        (grid, ls, plan, physics, seed, k, rank_limits, record_alpha)
        for ls in limit_sets
        for k in range(n_sims)
    ]
    if n_jobs == 1:
        results = [_run_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_cell, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))
    store = TraceStore()
    for job, trace in zip(jobs, results):
        store.traces[(job[1].name, plan.strategy.value, job[5])] = trace
    return store


# ------------------------------------------------------------- damage curves


def _padded(traces: Sequence[SimulationTrace], metric: str, n_rounds: int) -> np.ndarray:
    out = np.ones((len(traces), n_rounds))
    for i, tr in enumerate(traces):
        d = tr.damage(metric)
        out[i, : len(d)] = d
        if len(d):
            out[i, len(d):] = d[-1]
    return out


@dataclass(frozen=True)
class DamageCurves:
    """Per-method mean and standard deviation of damage by round.

    ``mean[metric]`` and ``sd[metric]`` are ``(n_methods, n_rounds)`` arrays
    in the order of ``methods``; ``rmse[method][metric]`` holds
    ``{"mean": ..., "sd": ...}`` against the reference method.
    """

    methods: tuple[str, ...]
    n_sims: int
    mean: dict[str, np.ndarray]
    sd: dict[str, np.ndarray]
    rmse: dict[str, dict[str, dict[str, float]]]

    def best(self, metric: str = "blackout", stat: str = "mean", reference: str = REAL) -> str:
        cands = {m: v[metric][stat] for m, v in self.rmse.items() if m != reference}
        return min(sorted(cands), key=lambda m: cands[m])


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def damage_curves(store: TraceStore, strategy: str = "random", reference: str = REAL) -> DamageCurves:
    """Mean/SD damage per round and the RMSE of each method against ``reference``.

    Rounds are aligned by targeted-removal index; shorter runs are held at
    their final damage (1 once the grid is empty).
    """
    methods = [m for m in store.methods() if store.cell(m, strategy)]
    if reference not in methods:
        raise ValueError(f"store has no {reference!r} cell to compare against")
    cells = {m: store.cell(m, strategy) for m in methods}
    counts = {len(c) for c in cells.values()}
    if len(counts) != 1:
        raise ValueError("every method needs the same number of simulations")
    n_rounds = max(max((t.n_rounds for t in c), default=0) for c in cells.values())
    n_rounds = max(n_rounds, 1)
    mean, sd = {}, {}
    for metric in ("giant", "blackout"):
        stacks = [_padded(cells[m], metric, n_rounds) for m in methods]
        mean[metric] = np.array([s.mean(axis=0) for s in stacks])
        sd[metric] = np.array([s.std(axis=0) for s in stacks])
    ref = methods.index(reference)
    rmse = {
        m: {
            metric: {
                "mean": _rmse(mean[metric][i], mean[metric][ref]),
                "sd": _rmse(sd[metric][i], sd[metric][ref]),
            }
            for metric in ("giant", "blackout")
        }
        for i, m in enumerate(methods)
    }
    return DamageCurves(tuple(methods), counts.pop(), mean, sd, rmse)


# ------------------------------------------------------ loss-order correlation


def spearman(x, y) -> float:
    """Spearman's rho with average ranks for ties; NaN when undefined."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if len(x) != len(y):
        raise ValueError("length mismatch")
    if len(x) < 2:
        return float("nan")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if den == 0:
        return float("nan")
    return float(np.clip((rx @ ry) / den, -1.0, 1.0))


@dataclass(frozen=True)
class LossOrderCorrelation:
    method: str
    rho: np.ndarray  # per simulation, NaN where undefined
    n_compared: np.ndarray
    n_dropped: np.ndarray

    @property
    def mean(self) -> float:
        ok = ~np.isnan(self.rho)
        return float(self.rho[ok].mean()) if ok.any() else float("nan")

    @property
    def n_undefined(self) -> int:
        return int(np.isnan(self.rho).sum())


def paired_loss_rounds(art: SimulationTrace, ref: SimulationTrace):
    """Cascade-loss rounds of nodes comparable between two paired runs.

    Nodes targeted in either run are excluded; only nodes lost to cascade in
    both runs are kept. Returns ``(nodes, art_rounds, ref_rounds, n_dropped)``.
    """
    excluded = art.targeted() | ref.targeted()
    a, r = art.cascade_loss_rounds(), ref.cascade_loss_rounds()
    common = sorted((a.keys() & r.keys()) - excluded)
    either = (a.keys() | r.keys()) - excluded
    return (
        common,
        [a[n] for n in common],
        [r[n] for n in common],
        len(either) - len(common),
    )


def loss_order_correlation(
    store: TraceStore, method: str, reference: str = REAL, strategy: str = "random"
) -> LossOrderCorrelation:
    arts, refs = store.cell(method, strategy), store.cell(reference, strategy)
    if not arts or len(arts) != len(refs):
        raise ValueError(f"no paired traces for {method!r} and {reference!r}")
    rho, n_cmp, n_drop = [], [], []
    for art, ref in zip(arts, refs):
        nodes, x, y, dropped = paired_loss_rounds(art, ref)
        rho.append(spearman(x, y) if len(nodes) >= 2 else float("nan"))
        n_cmp.append(len(nodes))
        n_drop.append(dropped)
    return LossOrderCorrelation(method, np.array(rho), np.array(n_cmp), np.array(n_drop))


# ------------------------------------------------------------ strategy ranks


@dataclass(frozen=True)
class StrategyRankTable:
    """Rank of each strategy per round (1 = most blackout damage)."""

    method: str
    strategies: tuple[str, ...]
    ranks: np.ndarray  # (n_rounds, n_strategies)
    rmse: float = float("nan")


def _rank_rows(damage: np.ndarray) -> np.ndarray:
    return np.vstack([rankdata(-row, method="average") for row in damage])


def rank_tables(
    store: TraceStore, strategies: Sequence[str] | None = None, reference: str = REAL
) -> dict[str, StrategyRankTable]:
    """Per-method strategy rank tables from a store with one run per strategy."""
    if strategies is None:
        strategies = [s for s in store.strategies() if s != Strategy.RANDOM.value]
    strategies = list(strategies)
    if not strategies:
        return {}
    methods = [m for m in store.methods() if all(store.cell(m, s) for s in strategies)]
    if reference not in methods:
        raise ValueError(f"store has no {reference!r} strategy runs")
    n_rounds = max(store.cell(m, s)[0].n_rounds for m in methods for s in strategies)
    damage = {
        m: np.column_stack([_padded(store.cell(m, s)[:1], "blackout", n_rounds)[0] for s in strategies])
        for m in methods
    }
    ranks = {m: _rank_rows(damage[m]) for m in methods}
    return {
        m: StrategyRankTable(m, tuple(strategies), ranks[m], _rmse(ranks[m], ranks[reference]))
        for m in methods
    }


def strategy_rank_rmse(
    grid: PowerGrid,
    limit_sets: Iterable[LimitSet],
    strategies: Sequence[Strategy | str] = TARGETED_STRATEGIES,
    *,
    physics: Physics | str = Physics.CASCADING_DC,
    rank_limits: LimitSet | None = None,
    reference: str = REAL,
) -> dict[str, StrategyRankTable]:
    """Run each strategy to collapse under every limit set and compare rankings.

    Attack orders are computed once on the intact grid (with ``rank_limits``,
    default the real limits) so every method replays identical orders.
    """
    store = strategy_store(grid, limit_sets, strategies, physics=physics, rank_limits=rank_limits)
    return rank_tables(store, [Strategy(s).value for s in strategies], reference)


def strategy_store(grid, limit_sets, strategies, *, physics=Physics.CASCADING_DC, rank_limits=None,
                   n_jobs=1) -> TraceStore:
    if rank_limits is None and grid.has_real_limits:
        rank_limits = real_limits(grid)
    store = TraceStore()
    limit_sets = list(limit_sets)
    for s in strategies:
        sub = run_batch(grid, limit_sets, 1, 0, plan=AttackPlan(Strategy(s)), physics=physics,
                        rank_limits=rank_limits, record_alpha=False, n_jobs=n_jobs)
        store.traces.update(sub.traces)
    return store


# ---------------------------------------------------------------- alpha trace


@dataclass(frozen=True)
class AlphaTrace:
    """Mean tolerance of surviving lines through an attack under PL(alpha).

    ``mean_alpha``/``mean_load`` are per-round averages over simulations
    (round 0 is the intact grid). ``delta_*`` are the per-simulation maximum
    drops from the initial value, averaged over simulations.
    """

    alpha: float
    mean_alpha: np.ndarray
    mean_load: np.ndarray
    delta_alpha: float
    delta_load: float

    @property
    def delta_total(self) -> float:
        return self.delta_alpha + self.delta_load


def _max_drop(series: np.ndarray) -> float:
    ok = ~np.isnan(series)
    if not ok.any() or np.isnan(series[0]):
        return 0.0
    return max(0.0, float(series[0] - np.min(series[ok])))


def alpha_trace(traces: Sequence[SimulationTrace], alpha: float) -> AlphaTrace:
    stats = [t.alpha_stats for t in traces]
    if not stats or any(s is None for s in stats):
        raise ValueError("traces carry no alpha statistics (topological physics or not recorded)")
    n_rounds = max(len(s) for s in stats)
    stack = np.full((len(stats), n_rounds, 2), np.nan)
    for i, s in enumerate(stats):
        stack[i, : len(s)] = s
    with np.errstate(invalid="ignore"):
        counts = (~np.isnan(stack)).sum(axis=0)
        curve = np.where(counts > 0, np.nansum(stack, axis=0) / np.maximum(counts, 1), np.nan)
    d_alpha = float(np.mean([_max_drop(s[:, 0]) for s in stats]))
    d_load = float(np.mean([_max_drop(s[:, 1]) for s in stats]))
    return AlphaTrace(float(alpha), curve[:, 0], curve[:, 1], d_alpha, d_load)


def alpha_traces(store: TraceStore, strategy: str = "random") -> dict[float, AlphaTrace]:
    """Alpha traces of every proportional-loading cell in ``store``."""
    out = {}
    for m in store.methods():
        if m.startswith(f"{PL}:"):
            cell = store.cell(m, strategy)
            if cell:
                out[float(m.split(":", 1)[1])] = alpha_trace(cell, float(m.split(":", 1)[1]))
    return dict(sorted(out.items()))


@dataclass(frozen=True)
class AlphaEstimate:
    traces: dict[float, AlphaTrace]
    best: float


def _argmin_alpha(traces: Mapping[float, AlphaTrace]) -> float:
    return min(sorted(traces), key=lambda a: traces[a].delta_total)


def estimate_true_alpha(
    grid: PowerGrid,
    candidates: Sequence[float],
    n_sims: int,
    seed: int = 0,
    *,
    plan: AttackPlan | None = None,
    n_jobs: int = 1,
) -> AlphaEstimate:
    """Candidate alpha whose PL run keeps tolerance and load level most stable."""
    candidates = [float(c) for c in candidates]
    if not candidates:
        raise ValueError("need at least one candidate alpha")
    if any(math.isinf(c) for c in candidates):
        raise ValueError("alpha traces are undefined for unbounded (topological) limits")
    flows = solve_flows(grid)
    sets = [proportional_limits(grid, flows, c) for c in candidates]
    store = run_batch(grid, sets, n_sims, seed, plan=plan, record_alpha=True, n_jobs=n_jobs)
    traces = {c: alpha_trace(store.cell(ls.name, (plan or AttackPlan()).strategy.value), c)
              for c, ls in zip(candidates, sets)}
    return AlphaEstimate(traces, _argmin_alpha(traces))


# --------------------------------------------------------------- persistence

TRACE_COLUMNS = (
    "method", "strategy", "sim_id", "round", "target", "nodes_lost", "lines_tripped",
    "giant_damage", "blackout_damage", "mean_alpha", "mean_load",
)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _traces_csv(store: TraceStore) -> str:
    rows = []
    for (method, strategy, sim), tr in sorted(store.traces.items()):
        stats = tr.alpha_stats
        for i, r in enumerate(tr.records):
            ma, ml = (float(stats[i + 1, 0]), float(stats[i + 1, 1])) if stats is not None else (math.nan, math.nan)
            rows.append((method, strategy, sim, r.round, ";".join(r.targets), len(r.lost),
                         len(r.tripped), r.giant_component_damage, r.blackout_damage, ma, ml))
    return _csv_text(TRACE_COLUMNS, rows)


def _traces_json(store: TraceStore) -> str:
    cells = []
    for (method, strategy, sim), tr in sorted(store.traces.items()):
        cells.append({
            "method": method,
            "strategy": strategy,
            "sim_id": sim,
            "limits": tr.limits,
            "physics": tr.physics,
            "initially_lost": list(tr.initially_lost),
            "rounds": [
                {
                    "targets": list(r.targets),
                    "lost": list(r.lost),
                    "tripped": [list(t) for t in r.tripped],
                    "giant": r.giant_component_damage,
                    "blackout": r.blackout_damage,
                }
                for r in tr.records
            ],
            "alpha_stats": None if tr.alpha_stats is None else [
                [None if math.isnan(v) else v for v in row] for row in tr.alpha_stats.tolist()
            ],
        })
    return json.dumps({"cells": cells}, sort_keys=True, separators=(",", ":")) + "\n"


def write_store(store: TraceStore, out_dir, config: Mapping | None = None) -> Path:
    """Write ``traces.csv``, ``traces.json`` and ``config.json`` (with checksums)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traces_csv, traces_json = _traces_csv(store), _traces_json(store)
    (out / "traces.csv").write_text(traces_csv, encoding="utf-8")
    (out / "traces.json").write_text(traces_json, encoding="utf-8")
    cfg = dict(config if config is not None else store.config)
    cfg["checksums"] = {"traces.csv": _sha(traces_csv), "traces.json": _sha(traces_json)}
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    store.config = cfg
    return out


def read_store(out_dir) -> TraceStore:
    out = Path(out_dir)
    cfg = json.loads((out / "config.json").read_text(encoding="utf-8"))
    sums = cfg.get("checksums", {})
    for name in ("traces.csv", "traces.json"):
        text = (out / name).read_text(encoding="utf-8")
        if sums.get(name) != _sha(text):
            raise StoreIntegrityError(f"{name} does not match its recorded checksum")
    doc = json.loads((out / "traces.json").read_text(encoding="utf-8"))
    store = TraceStore(config=cfg)
    for c in doc["cells"]:
        records = tuple(
            RoundRecord(i + 1, tuple(r["targets"]), tuple(r["lost"]),
                        tuple((t[0], int(t[1])) for t in r["tripped"]), r["giant"], r["blackout"])
            for i, r in enumerate(c["rounds"])
        )
        stats = None
        if c["alpha_stats"] is not None:
            stats = np.array([[np.nan if v is None else v for v in row] for row in c["alpha_stats"]],
                             float).reshape(-1, 2)
        store.traces[(c["method"], c["strategy"], int(c["sim_id"]))] = SimulationTrace(
            c["limits"], c["physics"], records, tuple(c["initially_lost"]), stats
        )
    return store


def write_aggregates(store: TraceStore, out_dir, reference: str = REAL) -> str:
    """Write curves, correlations, ranks and alpha-trace CSVs plus ``summary.txt``.

    Returns the summary text. Analyses whose inputs are missing (no reference
    cell, no strategy runs, no PL cells) are skipped and noted in the summary.
    """
    out = Path(out_dir)
    lines = []
    methods = store.methods()
    has_ref = reference in methods and bool(store.cell(reference))

    curve_rows, rmse_rows = [], []
    curves = None
    if has_ref:
        curves = damage_curves(store, reference=reference)
        for i, m in enumerate(curves.methods):
            for r in range(curves.mean["giant"].shape[1]):
                curve_rows.append((m, r + 1, curves.mean["giant"][i, r], curves.sd["giant"][i, r],
                                   curves.mean["blackout"][i, r], curves.sd["blackout"][i, r]))
            v = curves.rmse[m]
            rmse_rows.append((m, v["giant"]["mean"], v["giant"]["sd"], v["blackout"]["mean"], v["blackout"]["sd"]))
    else:
        lines.append(f"no {reference!r} cell: damage curves, correlations and ranks skipped")
    (out / "curves.csv").write_text(_csv_text(
        ("method", "round", "giant_mean", "giant_sd", "blackout_mean", "blackout_sd"), curve_rows))
    (out / "curve_rmse.csv").write_text(_csv_text(
        ("method", "giant_mean_rmse", "giant_sd_rmse", "blackout_mean_rmse", "blackout_sd_rmse"), rmse_rows))

    corr_rows, corr_means = [], {}
    if has_ref:
        for m in methods:
            if m == reference or not store.cell(m):
                continue
            lo = loss_order_correlation(store, m, reference)
            corr_means[m] = lo
            for k in range(len(lo.rho)):
                corr_rows.append((m, k, float(lo.rho[k]), int(lo.n_compared[k]), int(lo.n_dropped[k])))
    (out / "correlations.csv").write_text(_csv_text(
        ("method", "sim_id", "rho", "n_compared", "n_dropped"), corr_rows))

    rank_rows, tables = [], {}
    strat = [s for s in store.strategies() if s != Strategy.RANDOM.value]
    if strat and has_ref:
        tables = rank_tables(store, strat, reference)
        for m, t in tables.items():
            for r in range(t.ranks.shape[0]):
                for j, s in enumerate(t.strategies):
                    rank_rows.append((m, r + 1, s, float(t.ranks[r, j])))
    (out / "ranks.csv").write_text(_csv_text(("method", "round", "strategy", "rank"), rank_rows))

    alpha_rows, traces = [], {}
    if store.config.get("alpha_trace"):
        traces = alpha_traces(store)
        for a, t in traces.items():
            for r in range(len(t.mean_alpha)):
                alpha_rows.append((a, r, float(t.mean_alpha[r]), float(t.mean_load[r])))
    (out / "alpha_traces.csv").write_text(_csv_text(("alpha", "round", "mean_alpha", "mean_load"), alpha_rows))

    lines.append(f"cells: {len(store)}  methods: {len(methods)}")
    if curves is not None:
        lines.append("damage-curve RMSE against the reference (mean curve):")
        for m in curves.methods:
            if m == reference:
                continue
            v = curves.rmse[m]
            lines.append(f"  {m:<14} giant {v['giant']['mean']:.4f}  blackout {v['blackout']['mean']:.4f}")
        if len(curves.methods) > 1:
            lines.append(f"best method (blackout): {curves.best('blackout', reference=reference)}")
            lines.append(f"best method (giant): {curves.best('giant', reference=reference)}")
    if corr_means:
        lines.append("mean loss-order correlation:")
        for m, lo in corr_means.items():
            lines.append(f"  {m:<14} rho {lo.mean:.4f}  undefined {lo.n_undefined}")
    if tables:
        lines.append("strategy-rank RMSE:")
        for m, t in tables.items():
            if m != reference:
                lines.append(f"  {m:<14} {t.rmse:.4f}")
    if traces:
        lines.append("alpha trace (delta alpha + delta load level):")
        for a, t in traces.items():
            lines.append(f"  alpha {a:<8g} {t.delta_alpha:.4f} + {t.delta_load:.4f} = {t.delta_total:.4f}")
        lines.append(f"estimated true alpha: {_argmin_alpha(traces):g}")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text, encoding="utf-8")
    return text
