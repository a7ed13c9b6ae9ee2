"""Candidate forecaster pool with normal-approximation prediction intervals.

Every method returns H point forecasts plus its in-sample one-step
residuals; ``intervals`` turns the residual spread into central bounds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, Sequence

import numpy as np

from .core import FeaturecastError, TimeSeries, ValidationError, min_history

GRID = np.round(np.arange(1, 100) / 100.0, 2)
DAMPING_GRID = (0.8, 0.9, 0.98)
CROSTON_ALPHA = 0.1


class UnknownMethodError(ValidationError):
    pass


class MethodFailure(FeaturecastError):
    pass


@dataclass(frozen=True)
class MethodFit:
    points: np.ndarray
    residuals: np.ndarray


# --- exponential smoothing kernels ---------------------------------------------


def _ses_sse(y: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    level = np.full(alphas.shape, y[0])
    sse = np.zeros(alphas.shape)
    for t in range(1, y.size):
        e = y[t] - level
        sse += e * e
        level = level + alphas * e
    return sse


def _ses_run(y: np.ndarray, alpha: float) -> tuple[float, np.ndarray]:
    level = y[0]
    res = np.empty(y.size - 1)
    for t in range(1, y.size):
        e = y[t] - level
        res[t - 1] = e
        level = level + alpha * e
    return float(level), res


def fit_ses_alpha(y: np.ndarray) -> float:
    sse = _ses_sse(np.asarray(y, dtype=float), GRID)
    return float(GRID[int(np.argmin(sse))])


def ses(series, horizon: int, alpha: float | None = None) -> MethodFit:
    """Simple exponential smoothing; ``alpha`` is grid-fit when not given."""
    y = _values(series)
    if y.size < 2:
        raise ValidationError("ses needs at least 2 observations")
    if alpha is None:
        alpha = fit_ses_alpha(y)
    level, res = _ses_run(y, alpha)
    return MethodFit(np.full(horizon, level), res)


def _holt_grid(y, alphas, betas, phis) -> np.ndarray:
    # State after observing y[0], y[1]: level y[1], trend y[1] - y[0].
    level = np.full(alphas.shape, y[1])
    trend = np.full(alphas.shape, y[1] - y[0])
    ab = alphas * betas
    damped = bool(np.any(phis != 1.0))
    sse = np.zeros(alphas.shape)
    pred = np.empty_like(level)
    e = np.empty_like(level)
    tmp = np.empty_like(level)
    for t in range(2, y.size):
        if damped:
            np.multiply(phis, trend, out=trend)
        np.add(level, trend, out=pred)
        np.subtract(y[t], pred, out=e)
        np.multiply(e, e, out=tmp)
        sse += tmp
        np.multiply(alphas, e, out=tmp)
        np.add(pred, tmp, out=level)
        np.multiply(ab, e, out=tmp)
        trend += tmp
    return sse


def _holt_run(y, alpha, beta, phi):
    level, trend = y[1], y[1] - y[0]
    res = np.empty(y.size - 2)
    for t in range(2, y.size):
        pred = level + phi * trend
        e = y[t] - pred
        res[t - 2] = e
        level = pred + alpha * e
        trend = phi * trend + alpha * beta * e
    return level, trend, res


def _holt(y: np.ndarray, horizon: int, phis: Sequence[float]) -> MethodFit:
    if y.size < 3:
        raise ValidationError("holt needs at least 3 observations")
    A, B, P = np.meshgrid(GRID, GRID, np.asarray(phis, dtype=float), indexing="ij")
    A, B, P = A.ravel(), B.ravel(), P.ravel()
    best = int(np.argmin(_holt_grid(y, A, B, P)))
    alpha, beta, phi = float(A[best]), float(B[best]), float(P[best])
    level, trend, res = _holt_run(y, alpha, beta, phi)
    steps = np.cumsum(phi ** np.arange(1, horizon + 1))
    return MethodFit(level + steps * trend, res)


def holt(series, horizon: int) -> MethodFit:
    return _holt(_values(series), horizon, (1.0,))


def damped_holt(series, horizon: int) -> MethodFit:
    return _holt(_values(series), horizon, DAMPING_GRID)


def theta(series, horizon: int) -> MethodFit:
    """SES plus half the OLS slope (Hyndman and Billah form of the theta method)."""
    y = _values(series)
    n = y.size
    if n < 3:
        raise ValidationError("theta needs at least 3 observations")
    alpha = fit_ses_alpha(y)
    level, res = _ses_run(y, alpha)
    t = np.arange(n, dtype=float)
    tc = t - t.mean()
    slope = float(tc @ (y - y.mean()) / (tc @ tc))
    h = np.arange(1, horizon + 1)
    drift = 0.5 * slope * (h - 1 + 1 / alpha - (1 - alpha) ** n / alpha)
    return MethodFit(level + drift, res)


# --- simple benchmarks ---------------------------------------------------------


def mean_method(series, horizon: int) -> MethodFit:
    y = _values(series)
    return MethodFit(np.full(horizon, y.mean()), y - y.mean())


def naive(series, horizon: int) -> MethodFit:
    y = _values(series)
    return MethodFit(np.full(horizon, y[-1]), np.diff(y))


def seasonal_naive(series, horizon: int, period: int | None = None) -> MethodFit:
    y = _values(series)
    m = period if period is not None else getattr(series, "period", 1)
    if y.size < m + 1:
        raise ValidationError("seasonal naive needs more than one full period")
    h = np.arange(horizon)
    return MethodFit(y[y.size - m + (h % m)], y[m:] - y[:-m])


def drift(series, horizon: int) -> MethodFit:
    y = _values(series)
    if y.size < 2:
        raise ValidationError("drift needs at least 2 observations")
    slope = (y[-1] - y[0]) / (y.size - 1)
    h = np.arange(1, horizon + 1)
    return MethodFit(y[-1] + slope * h, np.diff(y) - slope)


# --- intermittent demand -------------------------------------------------------


def _croston_states(y: np.ndarray, alpha: float):
    """Yield the size/interval ratio available before each observation."""
    nz = np.flatnonzero(y != 0.0)
    if nz.size == 0:
        raise MethodFailure("croston needs at least one nonzero observation")
    size, interval = y[nz[0]], float(nz[0] + 1)
    ratios = np.full(y.size, np.nan)
    last = nz[0]
    for t in range(nz[0] + 1, y.size):
        ratios[t] = size / interval
        if y[t] != 0.0:
            size += alpha * (y[t] - size)
            interval += alpha * ((t - last) - interval)
            last = t
    return size / interval, ratios


def croston(series, horizon: int, alpha: float = CROSTON_ALPHA) -> MethodFit:
    y = _values(series)
    if y.size < 2:
        raise ValidationError("croston needs at least 2 observations")
    final, ratios = _croston_states(y, alpha)
    ok = ~np.isnan(ratios)
    return MethodFit(np.full(horizon, final), y[ok] - ratios[ok])


def sba(series, horizon: int, alpha: float = CROSTON_ALPHA) -> MethodFit:
    """Syntetos-Boylan bias-corrected Croston."""
    y = _values(series)
    if y.size < 2:
        raise ValidationError("sba needs at least 2 observations")
    final, ratios = _croston_states(y, alpha)
    k = 1 - alpha / 2
    ok = ~np.isnan(ratios)
    return MethodFit(np.full(horizon, k * final), y[ok] - k * ratios[ok])


def tsb(series, horizon: int, alpha: float = CROSTON_ALPHA, beta: float = CROSTON_ALPHA) -> MethodFit:
    """Teunter-Syntetos-Babai: smoothed demand probability times smoothed size."""
    y = _values(series)
    if y.size < 2:
        raise ValidationError("tsb needs at least 2 observations")
    nz = np.flatnonzero(y != 0.0)
    if nz.size == 0:
        return MethodFit(np.zeros(horizon), y.copy())
    prob = nz.size / y.size
    size = y[nz[0]]
    res = np.empty(y.size)
    for t in range(y.size):
        res[t] = y[t] - prob * size
        occurred = y[t] != 0.0
        prob += beta * (float(occurred) - prob)
        if occurred:
            size += alpha * (y[t] - size)
    return MethodFit(np.full(horizon, prob * size), res)


METHODS: dict[str, Callable] = {
    "mean": mean_method,
    "naive": naive,
    "seasonal_naive": seasonal_naive,
    "drift": drift,
    "ses": ses,
    "holt": holt,
    "damped_holt": damped_holt,
    "theta": theta,
    "croston": croston,
    "sba": sba,
    "tsb": tsb,
}
DEFAULT_ROSTER = tuple(METHODS)
RANDOM_WALK_LIKE = {"naive", "drift", "seasonal_naive"}


def _values(series) -> np.ndarray:
    return np.asarray(getattr(series, "values", series), dtype=float)


# --- intervals and bundles -----------------------------------------------------


def horizon_scaling(method: str, horizon: int, period: int = 1) -> np.ndarray:
    h = np.arange(1, horizon + 1)
    if method == "seasonal_naive":
        return np.sqrt(np.ceil(h / period))
    if method in RANDOM_WALK_LIKE:
        return np.sqrt(h)
    return np.ones(horizon)


def residual_sd(residuals: np.ndarray) -> float:
    r = np.asarray(residuals, dtype=float)
    if r.size < 2:
        return 0.0
    return float(np.std(r, ddof=1))


def intervals(points, residuals, method: str, alpha: float, period: int = 1):
    """Central ``1 - alpha`` bounds: point +- z * sd(residuals) * c(h)."""
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    points = np.asarray(points, dtype=float)
    z = NormalDist().inv_cdf(1 - alpha / 2)
    half = z * residual_sd(residuals) * horizon_scaling(method, points.size, period)
    return points - half, points + half


@dataclass(frozen=True)
class ForecastBundle:
    methods: tuple
    points: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    substituted: tuple = ()

    def __post_init__(self):
        for name in ("points", "lower", "upper"):
            a = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.substituted:
            object.__setattr__(self, "substituted", (False,) * len(self.methods))
        if self.points.shape[0] != len(self.methods):
            raise ValidationError("one row of forecasts per method is required")

    @property
    def horizon(self) -> int:
        return self.points.shape[1]

    def subset(self, methods: Sequence[str]) -> "ForecastBundle":
        idx = [self.methods.index(m) for m in methods]
        return ForecastBundle(
            tuple(methods),
            self.points[idx],
            self.lower[idx],
            self.upper[idx],
            self.alpha,
            tuple(self.substituted[i] for i in idx),
        )

    def to_records(self, series_id: str) -> list[dict]:
        return [
            {
                "series_id": series_id,
                "method": m,
                "points": self.points[i].tolist(),
                "lower": self.lower[i].tolist(),
                "upper": self.upper[i].tolist(),
                "substituted": bool(self.substituted[i]),
            }
            for i, m in enumerate(self.methods)
        ]

    def to_jsonl(self, series_id: str) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.to_records(series_id))

    @classmethod
    def from_records(cls, records: Sequence[dict], alpha: float) -> "ForecastBundle":
        return cls(
            tuple(r["method"] for r in records),
            [r["points"] for r in records],
            [r["lower"] for r in records],
            [r["upper"] for r in records],
            alpha,
            tuple(bool(r.get("substituted", False)) for r in records),
        )


def run_method(name: str, series: TimeSeries, horizon: int) -> MethodFit:
    if name not in METHODS:
        raise UnknownMethodError(f"unknown method {name!r}; choose from {sorted(METHODS)}")
    fit = METHODS[name](series, horizon)
    if fit.points.shape != (horizon,) or not np.all(np.isfinite(fit.points)):
        raise MethodFailure(f"{name} produced non-finite forecasts")
    if not np.all(np.isfinite(fit.residuals)):
        raise MethodFailure(f"{name} produced non-finite residuals")
    return fit


def forecast_all(
    series: TimeSeries, horizon: int, alpha: float = 0.05, roster: Sequence[str] = DEFAULT_ROSTER
) -> ForecastBundle:
    """Run every roster method; failures fall back to naive and are flagged."""
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    roster = tuple(roster)
    if not roster:
        raise ValidationError("roster is empty")
    unknown = [m for m in roster if m not in METHODS]
    if unknown:
        raise UnknownMethodError(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
    if len(series) < min_history(series.period):
        raise ValidationError(
            f"series {series.id!r} has length {len(series)}, needs {min_history(series.period)}"
        )
    pts, lo, hi, flags = [], [], [], []
    for name in roster:
        used, flag = name, False
        try:
            fit = run_method(name, series, horizon)
        except (FeaturecastError, ValueError, ArithmeticError, np.linalg.LinAlgError):
            used, flag = "naive", True
            fit = run_method("naive", series, horizon)
        lower, upper = intervals(fit.points, fit.residuals, used, alpha, series.period)
        pts.append(fit.points)
        lo.append(lower)
        hi.append(upper)
        flags.append(flag)
    return ForecastBundle(roster, np.array(pts), np.array(lo), np.array(hi), alpha, tuple(flags))
