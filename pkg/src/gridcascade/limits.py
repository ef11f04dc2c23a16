"""Artificial line limits and their accuracy against real limits.

Three families are provided: proportional loading (``alpha * |initial flow|``),
linear models on initial flow and voltage class, and the topological rule
where no line ever trips. The regression estimators follow the scikit-learn
estimator API so they compose with ``cross_val_predict``, ``GridSearchCV``
and friends.

Regression units: the flow regressor and the response are in thousands of MW,
so fitted coefficients read on the same scale as published ones
(intercept in thousands of MW as well).
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.model_selection import KFold
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dcflow import FlowState
from .grid import LIMIT_FLOOR_MW, PowerGrid

__all__ = [
    "DEFAULT_ALPHAS",
    "AccuracyReport",
    "AlphaDistribution",
    "LimitSet",
    "LinearLimitModel",
    "LinearLimitRegressor",
    "ProportionalLoading",
    "alpha_distribution",
    "alpha_sweep",
    "fit_linear_model",
    "limit_features",
    "proportional_limits",
    "real_limits",
    "score_limits",
    "topological_limits",
]

DEFAULT_ALPHAS = (1.05, 1.1, 1.2, 1.3, 1.5, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 50.0)
COND_WARN = 1e10

REAL, PL, VOLT_PF, PF, TOPOLOGICAL = "real", "pl", "volt_pf", "pf", "topological"
_METHODS = (REAL, PL, VOLT_PF, PF, TOPOLOGICAL)


@dataclass(frozen=True, eq=False)
class LimitSet:
    """MW limit for every line of a grid, tagged with how it was produced."""

    method: str
    line_ids: tuple[str, ...]
    limits: np.ndarray
    alpha: float | None = None

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"unknown limit method {self.method!r}")
        limits = np.array(self.limits, dtype=float)
        limits.flags.writeable = False
        object.__setattr__(self, "limits", limits)
        object.__setattr__(self, "line_ids", tuple(self.line_ids))
        if limits.shape != (len(self.line_ids),):
            raise ValueError("one limit per line required")
        if self.method == PL and not (self.alpha and self.alpha > 0):
            raise ValueError("proportional limits need alpha > 0")

    @property
    def name(self) -> str:
        if self.method == PL:
            return f"pl:{self.alpha:g}"
        return self.method

    def __eq__(self, other):
        if not isinstance(other, LimitSet):
            return NotImplemented
        return (
            self.method == other.method
            and self.alpha == other.alpha
            and self.line_ids == other.line_ids
            and np.array_equal(self.limits, other.limits)
        )

    def __len__(self):
        return len(self.line_ids)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["line_id", "limit_mw", "method"])
            for lid, lim in zip(self.line_ids, self.limits):
                w.writerow([lid, "inf" if math.isinf(lim) else format(lim, ".17g"), self.name])

    @classmethod
    def from_csv(cls, path) -> "LimitSet":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no limits")
        name = rows[0]["method"]
        method, alpha = (PL, float(name.split(":", 1)[1])) if name.startswith("pl:") else (name, None)
        return cls(method, [r["line_id"] for r in rows], [float(r["limit_mw"]) for r in rows], alpha)


def proportional_limits(grid: PowerGrid, initial_flows: FlowState, alpha: float) -> LimitSet:
    """``alpha * |initial flow|``; zero-flow lines get ``max(alpha, 1) * 1 MW``."""
    if not (isinstance(alpha, (int, float)) and alpha > 0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be a finite number > 0, got {alpha!r}")
    absf = np.abs(np.asarray(initial_flows.flows, float))
    floor = max(alpha * LIMIT_FLOOR_MW, LIMIT_FLOOR_MW)
    return LimitSet(PL, grid.line_ids, np.where(absf > 0, alpha * absf, floor), float(alpha))


def topological_limits(grid: PowerGrid) -> LimitSet:
    return LimitSet(TOPOLOGICAL, grid.line_ids, np.full(grid.n_lines, np.inf))


def real_limits(grid: PowerGrid) -> LimitSet:
    if not grid.has_real_limits and grid.n_lines:
        missing = [l.id for l in grid.lines if l.real_limit is None]
        raise ValueError(f"{len(missing)} lines lack a real limit (first: {missing[0]})")
    return LimitSet(REAL, grid.line_ids, grid.real_limits)


# ------------------------------------------------------------------ regression


@dataclass(frozen=True)
class LinearLimitModel:
    """``limit = b0 + b_f * flow + b_275 * [275 kV] + b_400 * [400 kV]``.

    All terms in thousands of MW; ``v275``/``v400`` are ``None`` for the
    flow-only model.
    """

    intercept: float
    flow: float
    v275: float | None = None
    v400: float | None = None

    @property
    def uses_voltage(self) -> bool:
        return self.v275 is not None or self.v400 is not None

    def predict_mw(self, abs_flow_mw, voltage_kv=None) -> np.ndarray:
        """Raw model output converted to MW (no floor)."""
        x = np.asarray(abs_flow_mw, float) / 1000.0
        y = self.intercept + self.flow * x
        if self.uses_voltage:
            v = np.asarray(voltage_kv)
            y = y + (self.v275 or 0.0) * (v == 275) + (self.v400 or 0.0) * (v == 400)
        return y * 1000.0


def limit_features(grid: PowerGrid, initial_flows: FlowState) -> np.ndarray:
    """``(n_lines, 2)`` array of absolute initial flow (MW) and voltage (kV)."""
    return np.column_stack([np.abs(initial_flows.flows), grid.line_voltage.astype(float)])


def _design(X, use_voltage):
    flow_k = np.abs(X[:, 0]) / 1000.0
    cols = [np.ones(len(X)), flow_k]
    if use_voltage:
        v = X[:, 1]
        cols += [(v == 275).astype(float), (v == 400).astype(float)]
    return np.column_stack(cols)


def _ols_normal_equations(A, y):
    """Least squares via a Cholesky factorisation of ``A^T A``."""
    gram = A.T @ A
    cond = np.linalg.cond(gram)
    if cond > COND_WARN:
        warnings.warn(f"ill-conditioned normal equations (cond={cond:.2e})", RuntimeWarning)
    factor = sla.cho_factor(gram, lower=True)
    return sla.cho_solve(factor, A.T @ y)


class LinearLimitRegressor(RegressorMixin, BaseEstimator):
    """Ordinary least squares line-limit model.

    ``X`` holds ``[abs initial flow MW, voltage kV]`` per line and ``y`` the
    real limits in MW. Columns that are collinear with earlier ones (e.g. a
    voltage indicator when every line shares one class) are dropped with a
    warning and reported as zero coefficients.

    Parameters
    ----------
    use_voltage : bool
        Include the 275 kV and 400 kV indicators (the Volt-PF model).
    floor_mw : float
        Predictions are clipped from below to this value.
    """

    def __init__(self, use_voltage=True, floor_mw=LIMIT_FLOOR_MW):
        self.use_voltage = use_voltage
        self.floor_mw = floor_mw

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, ensure_min_features=1)
        if self.use_voltage and X.shape[1] < 2:
            raise ValueError("voltage model needs a voltage column")
        A = _design(X, self.use_voltage)
        yk = y / 1000.0
        keep = []
        for j in range(A.shape[1]):
            trial = keep + [j]
            if np.linalg.matrix_rank(A[:, trial]) == len(trial):
                keep = trial
        dropped = [j for j in range(A.shape[1]) if j not in keep]
        if dropped:
            names = ["intercept", "flow", "v275", "v400"]
            warnings.warn(
                f"rank-deficient design, dropped {[names[j] for j in dropped]}", RuntimeWarning
            )
        beta = np.zeros(A.shape[1])
        beta[keep] = _ols_normal_equations(A[:, keep], yk)
        self.coef_ = beta
        self.dropped_ = tuple(dropped)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def model_(self) -> LinearLimitModel:
        check_is_fitted(self, "coef_")
        b = self.coef_
        if self.use_voltage:
            return LinearLimitModel(float(b[0]), float(b[1]), float(b[2]), float(b[3]))
        return LinearLimitModel(float(b[0]), float(b[1]))

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        return np.maximum(_design(X, self.use_voltage) @ self.coef_ * 1000.0, self.floor_mw)


class ProportionalLoading(RegressorMixin, BaseEstimator):
    """Proportional loading as an estimator: ``predict(X) = alpha * |X[:, 0]|``.

    Fitting learns nothing; it exists so ``alpha`` can be tuned with the
    usual model-selection tools.
    """

    def __init__(self, alpha=1.0, floor_mw=LIMIT_FLOOR_MW):
        self.alpha = alpha
        self.floor_mw = floor_mw

    def fit(self, X, y=None):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        X = check_array(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=float)
        absf = np.abs(X[:, 0])
        floor = max(self.alpha * self.floor_mw, self.floor_mw)
        return np.where(absf > 0, self.alpha * absf, floor)


def fit_linear_model(
    grid: PowerGrid,
    initial_flows: FlowState,
    real: LimitSet,
    use_voltage: bool = True,
    folds: int = 10,
    seed: int = 0,
) -> tuple[list[LinearLimitModel], LimitSet]:
    """K-fold fit of a linear limit model.

    Returns the per-fold models and the out-of-fold predictions, i.e. each
    line's limit comes from the model that did not see it.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if real.line_ids != tuple(grid.line_ids):
        raise ValueError("real limits do not match the grid's lines")
    X = limit_features(grid, initial_flows)
    y = np.asarray(real.limits, float)
    if not np.all(np.isfinite(y)):
        raise ValueError("real limits must be finite")
    pred = np.empty_like(y)
    models = []
    splitter = KFold(n_splits=folds, shuffle=True, random_state=seed)
    for train, test in splitter.split(X):
        est = LinearLimitRegressor(use_voltage=use_voltage).fit(X[train], y[train])
        models.append(est.model_)
        pred[test] = est.predict(X[test])
    return models, LimitSet(VOLT_PF if use_voltage else PF, grid.line_ids, pred)


# -------------------------------------------------------------------- accuracy


@dataclass(frozen=True)
class AccuracyReport:
    r_squared: float
    rmse: float
    mape: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def score_limits(predicted: LimitSet, real: LimitSet) -> AccuracyReport:
    """R-squared, RMSE (MW) and MAPE (fraction) of predicted against real limits."""
    if predicted.line_ids != real.line_ids:
        raise ValueError("limit sets cover different lines")
    y = np.asarray(real.limits, float)
    yhat = np.asarray(predicted.limits, float)
    if not np.all(np.isfinite(yhat)):
        raise ValueError(f"{predicted.name} limits are unbounded; accuracy is undefined")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("MAPE is undefined for non-positive real limits")
    resid = y - yhat
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else -math.inf)
    return AccuracyReport(
        r_squared=r2,
        rmse=math.sqrt(ss_res / len(y)),
        mape=float(np.mean(np.abs(resid) / y)),
    )


def alpha_sweep(
    grid: PowerGrid, initial_flows: FlowState, real: LimitSet, alphas: Iterable[float] = DEFAULT_ALPHAS
) -> list[tuple[float, AccuracyReport]]:
    return [
        (a, score_limits(proportional_limits(grid, initial_flows, a), real)) for a in alphas
    ]


@dataclass(frozen=True)
class AlphaDistribution:
    alphas: np.ndarray  # per line, NaN where the initial flow is zero
    mean: float
    median: float
    counts: np.ndarray
    bin_edges: np.ndarray
    n_zero_flow: int


def alpha_distribution(real: LimitSet, initial_flows: FlowState, bins: int | Sequence[float] = 20) -> AlphaDistribution:
    """Per-line tolerance ``real limit / |initial flow|`` and its summary."""
    absf = np.abs(np.asarray(initial_flows.flows, float))
    lim = np.asarray(real.limits, float)
    nz = absf > 0
    alphas = np.full(len(absf), np.nan)
    alphas[nz] = lim[nz] / absf[nz]
    vals = alphas[nz]
    if len(vals):
        lo, hi = float(vals.min()), float(vals.max())
        span = None
        if np.ndim(bins) == 0 and hi - lo <= 1e-9 * max(1.0, abs(hi)):
            span = (lo - 0.5, hi + 0.5)  # rounding-level spread, treat as one value
        counts, edges = np.histogram(vals, bins=bins, range=span)
        mean, median = float(vals.mean()), float(np.median(vals))
    else:
        counts, edges = np.zeros(0, int), np.zeros(0)
        mean = median = float("nan")
    return AlphaDistribution(alphas, mean, median, counts, edges, int((~nz).sum()))


def write_reports(reports: dict[str, AccuracyReport], path) -> None:
    Path(path).write_text(
        json.dumps({k: asdict(v) for k, v in reports.items()}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
