"""Command-line entry point: ``gridcascade fit-limits | simulate | report``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from . import __version__
from .cascade import Physics
from .dcflow import NumericalError, solve_flows
from .experiments import (
    StoreIntegrityError,
    TraceStore,
    read_store,
    run_batch,
    strategy_store,
    write_aggregates,
    write_store,
)
from .grid import GridParseError, GridValidationError, grid_hash, load_grid
from .limits import (
    DEFAULT_ALPHAS,
    alpha_distribution,
    fit_linear_model,
    proportional_limits,
    real_limits,
    score_limits,
    topological_limits,
    write_reports,
)
from .strategies import TARGETED_STRATEGIES, AttackPlan, AttackType, Regime, Strategy

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
LOAD_PROFILES = ("single",)


class ConfigError(ValueError):
    pass


@dataclass
class Pearl:
    physics: str = "dc"
    element: str = "node"
    attack_type: str = "fixed"
    regime: str = "sequential"
    group_size: int = 1
    n_targets: int | None = None
    load_profile: str = "single"
    strategy: str = "random"

    def validate(self):
        _choice("physics", self.physics, [p.value for p in Physics])
        _choice("element", self.element, ["node"])
        _choice("attack_type", self.attack_type, [a.value for a in AttackType])
        _choice("regime", self.regime, ["sequential", "simultaneous", "hybrid"])
        _choice("load_profile", self.load_profile, LOAD_PROFILES)
        _choice("strategy", self.strategy, [s.value for s in Strategy])
        if self.n_targets is not None and (not isinstance(self.n_targets, int) or self.n_targets < 1):
            raise ConfigError("pearl.n_targets must be a positive integer")

    def plan(self) -> AttackPlan:
        group = self.group_size if self.regime == "hybrid" else 1
        return AttackPlan(self.strategy, self.attack_type, Regime(self.regime, group), self.n_targets)


@dataclass
class LimitMethods:
    alphas: list[float] = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    volt_pf: bool = True
    pf: bool = True
    real: bool = True
    topological: bool = True
    folds: int = 10

    def validate(self):
        if not isinstance(self.alphas, list) or any(
            not isinstance(a, (int, float)) or isinstance(a, bool) or not a > 0 or a == float("inf")
            for a in self.alphas
        ):
            raise ConfigError("limits.alphas must be a list of positive finite numbers")
        if len(set(self.alphas)) != len(self.alphas):
            raise ConfigError("limits.alphas has duplicates")
        if not isinstance(self.folds, int) or self.folds < 2:
            raise ConfigError("limits.folds must be an integer >= 2")


@dataclass
class RunConfig:
    """Everything needed to replay a run. The output directory is not part of it."""

    nodes: str | None = None
    edges: str | None = None
    grid_hash: str | None = None
    pearl: Pearl = field(default_factory=Pearl)
    limits: LimitMethods = field(default_factory=LimitMethods)
    rank_strategies: list[str] = field(default_factory=list)
    alpha_trace: bool = False
    n_sims: int = 100
    seed: int = 0
    version: str = __version__

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        doc.pop("checksums", None)
        _reject_unknown("config", doc, [f.name for f in fields(cls)])
        pearl = doc.pop("pearl", {}) or {}
        limits = doc.pop("limits", {}) or {}
        _reject_unknown("pearl", pearl, [f.name for f in fields(Pearl)])
        _reject_unknown("limits", limits, [f.name for f in fields(LimitMethods)])
        return cls(**doc, pearl=Pearl(**pearl), limits=LimitMethods(**limits))

    def validate(self):
        self.pearl.validate()
        self.limits.validate()
        for s in self.rank_strategies:
            _choice("rank_strategies", s, [x.value for x in Strategy if x is not Strategy.RANDOM])
        if not isinstance(self.n_sims, int) or self.n_sims < 1:
            raise ConfigError("n_sims must be a positive integer")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not self.nodes or not self.edges:
            raise ConfigError("grid node and edge files are required")
        if self.alpha_trace and self.pearl.physics == Physics.TOPOLOGICAL.value:
            raise ConfigError("alpha traces need DC physics: limits are unbounded under topological physics")
        if self.alpha_trace and not self.limits.alphas:
            raise ConfigError("alpha trace requested without any PL alphas")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _choice(name, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{name}={value!r} is not one of {list(allowed)}")


def _reject_unknown(where, doc, known):
    extra = sorted(set(doc) - set(known))
    if extra:
        raise ConfigError(f"unknown {where} keys: {extra}")


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _parse_alphas(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --alphas value {text!r}") from exc


def build_config(args) -> RunConfig:
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        cfg = RunConfig.from_dict(doc)
    else:
        cfg = RunConfig()
    if args.grid_nodes:
        cfg.nodes, cfg.grid_hash = str(Path(args.grid_nodes).resolve()), None
    if args.grid_edges:
        cfg.edges, cfg.grid_hash = str(Path(args.grid_edges).resolve()), None
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "sims", None) is not None:
        cfg.n_sims = args.sims
    if args.alphas:
        cfg.limits.alphas = _parse_alphas(args.alphas)
    if getattr(args, "alpha", None) is not None:
        cfg.limits.alphas = [args.alpha]
    if getattr(args, "strategies", None):
        names = [s.strip() for s in args.strategies.split(",") if s.strip()]
        cfg.rank_strategies = [s.value for s in TARGETED_STRATEGIES] if names == ["all"] else names
    if getattr(args, "physics", None):
        cfg.pearl.physics = args.physics
    if getattr(args, "alpha_trace", False):
        cfg.alpha_trace = True
    if getattr(args, "attack", None):
        cfg.pearl.strategy = args.attack
    cfg.validate()
    return cfg


def _load(cfg: RunConfig):
    grid = load_grid(cfg.nodes, cfg.edges)
    h = grid_hash(grid)
    if cfg.grid_hash is not None and cfg.grid_hash != h:
        raise ConfigError("grid files do not match the hash recorded in the config")
    cfg.grid_hash = h
    return grid


def _limit_sets(cfg: RunConfig, grid, flows, *, strict: bool):
    sets = []
    want_real = cfg.limits.real or cfg.limits.volt_pf or cfg.limits.pf
    if want_real and not grid.has_real_limits:
        if strict:
            raise ConfigError("the grid has no real limits; disable real/volt_pf/pf")
        _progress("grid has no real limits: skipping real and regression methods")
    elif want_real:
        real = real_limits(grid)
        if cfg.limits.real:
            sets.append(real)
        for flag, use_v in (("volt_pf", True), ("pf", False)):
            if getattr(cfg.limits, flag):
                sets.append(fit_linear_model(grid, flows, real, use_v, cfg.limits.folds, cfg.seed)[1])
    sets += [proportional_limits(grid, flows, a) for a in cfg.limits.alphas]
    if cfg.limits.topological:
        sets.append(topological_limits(grid))
    return sets


def cmd_fit_limits(cfg: RunConfig, out: Path) -> int:
    grid = _load(cfg)
    if not grid.has_real_limits:
        raise ConfigError("fit-limits needs a grid with real limits (limit_mw column)")
    flows = solve_flows(grid)
    out.mkdir(parents=True, exist_ok=True)
    real = real_limits(grid)
    reports = {}
    for ls in _limit_sets(cfg, grid, flows, strict=True):
        if ls.method in ("real", "topological"):
            continue
        reports[ls.name] = score_limits(ls, real)
        ls.to_csv(out / f"limits_{ls.name.replace(':', '_')}.csv")
        _progress(f"fitted {ls.name}: R2={reports[ls.name].r_squared:.6f}")
    write_reports(reports, out / "accuracy.json")
    dist = alpha_distribution(real, flows)
    (out / "alpha_distribution.json").write_text(
        json.dumps({"mean": dist.mean, "median": dist.median, "n_zero_flow": dist.n_zero_flow,
                    "counts": dist.counts.tolist(), "bin_edges": dist.bin_edges.tolist()},
                   indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out: Path, n_jobs: int = 1) -> int:
    grid = _load(cfg)
    flows = solve_flows(grid)
    sets = _limit_sets(cfg, grid, flows, strict=False)
    physics = Physics(cfg.pearl.physics)
    plan = cfg.pearl.plan()
    plan.validate_for(grid)
    rank_limits = real_limits(grid) if grid.has_real_limits else None
    store = TraceStore()
    for ls in sets:
        _progress(f"simulating {ls.name}: {cfg.n_sims} runs")
        store.traces.update(run_batch(grid, [ls], cfg.n_sims, cfg.seed, plan=plan, physics=physics,
                                      rank_limits=rank_limits, record_alpha=cfg.alpha_trace,
                                      n_jobs=n_jobs).traces)
    if cfg.rank_strategies:
        _progress(f"strategy runs: {', '.join(cfg.rank_strategies)}")
        store.traces.update(strategy_store(grid, sets, cfg.rank_strategies, physics=physics,
                                           rank_limits=rank_limits, n_jobs=n_jobs).traces)
    write_store(store, out, asdict(cfg))
    _progress(write_aggregates(store, out).rstrip())
    return EXIT_OK


def cmd_report(results: Path) -> int:
    store = read_store(results)
    print(write_aggregates(store, results), end="")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridcascade", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--grid-nodes")
        sp.add_argument("--grid-edges")
        sp.add_argument("--config", help="JSON run config; flags override it")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--alphas", help="comma-separated PL tolerance factors")

    fit = sub.add_parser("fit-limits", help="fit artificial limits and score them against real ones")
    common(fit)
    fit.add_argument("--alpha", type=float, help="single PL tolerance factor")

    sim = sub.add_parser("simulate", help="run a Monte Carlo attack batch and aggregate it")
    common(sim)
    sim.add_argument("--sims", type=int)
    sim.add_argument("--physics", choices=[p.value for p in Physics])
    sim.add_argument("--strategies", help="comma-separated strategies to rank, or 'all'")
    sim.add_argument("--attack", help="strategy for the Monte Carlo batch (default random)")
    sim.add_argument("--alpha-trace", action="store_true", help="record and report alpha traces")
    sim.add_argument("--jobs", type=int, default=1, help="worker processes")

    rep = sub.add_parser("report", help="aggregate an existing results directory")
    rep.add_argument("results")
    return p


def _numerical(exc: BaseException) -> bool:
    while exc is not None:
        if isinstance(exc, (NumericalError, FloatingPointError)):
            return True
        exc = exc.__cause__
    return False


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(Path(args.results))
        cfg = build_config(args)
        if args.command == "fit-limits":
            return cmd_fit_limits(cfg, Path(args.out))
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return cmd_simulate(cfg, Path(args.out), args.jobs)
    except (ConfigError, GridParseError, GridValidationError, StoreIntegrityError,
            FileNotFoundError, IsADirectoryError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        if _numerical(exc):
            print(f"numerical error: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        if isinstance(exc, ValueError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        raise


if __name__ == "__main__":
    sys.exit(main())
