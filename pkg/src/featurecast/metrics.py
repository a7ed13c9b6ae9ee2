"""Point and interval losses, and the accuracy/diversity split of combined MSE."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .core import DegenerateSeriesError, ValidationError


class WeightError(ValidationError):
    pass


def check_weights(weights, M: int, tol: float = 1e-9) -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != M:
        raise WeightError(f"expected {M} weights, got {w.size}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise WeightError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > tol:
        raise WeightError(f"weights sum to {w.sum()!r}, not 1")
    return w


def mse_decomposition(points, weights, actuals) -> tuple[float, float, float]:
    """``(mse_comb, sum_i w_i MSE_i, sum_{i<j} w_i w_j Div_ij)``.

    ``mse_comb`` equals the second value minus the third.
    """
    F = np.atleast_2d(np.asarray(getattr(points, "points", points), dtype=float))
    M, H = F.shape
    w = check_weights(weights, M)
    y = np.asarray(actuals, dtype=float).ravel()
    if y.size != H:
        raise ValidationError("actuals length does not match the horizon")
    comb = w @ F
    mse_comb = float(np.mean((comb - y) ** 2))
    mse_i = np.mean((F - y) ** 2, axis=1)
    weighted = float(w @ mse_i)
    diff = F[:, None, :] - F[None, :, :]
    div = np.mean(diff * diff, axis=2)
    diversity = float(np.sum(np.triu(np.outer(w, w) * div, 1)))
    return mse_comb, weighted, diversity


def _history(history) -> np.ndarray:
    return np.asarray(getattr(history, "values", history), dtype=float)


def rmsse(actuals, forecasts, history) -> float:
    """Root mean squared error scaled by the in-sample one-step naive MSE."""
    y = np.asarray(actuals, dtype=float)
    f = np.asarray(forecasts, dtype=float)
    h = _history(history)
    if h.size < 2:
        raise DegenerateSeriesError("RMSSE needs at least 2 history points")
    scale = np.mean(np.diff(h) ** 2)
    if scale == 0.0:
        raise DegenerateSeriesError("RMSSE undefined: history is constant")
    return float(np.sqrt(np.mean((y - f) ** 2) / scale))


def msis(actuals, lower, upper, history, alpha: float, m: int) -> float:
    """Mean scaled interval score, scaled by the in-sample lag-m MAE."""
    y = np.asarray(actuals, dtype=float)
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    h = _history(history)
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    if h.size <= m:
        raise DegenerateSeriesError(f"MSIS needs more than m={m} history points")
    if np.any(lo > hi):
        raise ValidationError("lower bound exceeds upper bound")
    scale = np.mean(np.abs(h[m:] - h[:-m]))
    if scale == 0.0:
        raise DegenerateSeriesError("MSIS undefined: seasonal-naive scale is zero")
    score = (hi - lo) + (2 / alpha) * (lo - y) * (y < lo) + (2 / alpha) * (y - hi) * (y > hi)
    return float(np.mean(score) / scale)


def smape(actuals, forecasts) -> float:
    """Symmetric MAPE as a fraction in [0, 2]; 0/0 terms count as 0."""
    y = np.asarray(actuals, dtype=float)
    f = np.asarray(forecasts, dtype=float)
    num = np.abs(y - f)
    den = np.abs(y) + np.abs(f)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(2.0 * np.mean(terms))


def mase(actuals, forecasts, history, m: int = 1) -> float:
    y = np.asarray(actuals, dtype=float)
    f = np.asarray(forecasts, dtype=float)
    h = _history(history)
    if h.size <= m:
        raise DegenerateSeriesError(f"MASE needs more than m={m} history points")
    scale = np.mean(np.abs(h[m:] - h[:-m]))
    if scale == 0.0:
        raise DegenerateSeriesError("MASE undefined: history is constant at lag m")
    return float(np.mean(np.abs(y - f)) / scale)


POINT_LOSSES = {
    "rmsse": lambda y, f, hist, m: rmsse(y, f, hist),
    "smape": lambda y, f, hist, m: smape(y, f),
    "mase": lambda y, f, hist, m: mase(y, f, hist, m),
}


def point_loss(name: str, actuals, forecasts, history, m: int = 1) -> float:
    try:
        fn = POINT_LOSSES[name]
    except KeyError:
        raise ValidationError(f"unknown loss {name!r}; choose from {sorted(POINT_LOSSES)}") from None
    return fn(actuals, forecasts, history, m)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)  # (series_id, method, loss_name, value)
    decomposition_residuals: list = field(default_factory=list)
    substitutions: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def add(self, series_id: str, method: str, loss: str, value: float):
        self.rows.append((series_id, method, loss, float(value)))

    def aggregate(self) -> dict:
        acc: dict = {}
        for _sid, method, loss, value in self.rows:
            acc.setdefault(method, {}).setdefault(loss, []).append(value)
        return {
            method: {loss: float(np.mean(v)) for loss, v in losses.items()}
            for method, losses in acc.items()
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("series_id", "method", "loss_name", "value"))
        for sid, method, loss, value in self.rows:
            w.writerow((sid, method, loss, repr(value)))
        return buf.getvalue()

    def summary(self) -> dict:
        res = self.decomposition_residuals
        return {
            "aggregate": self.aggregate(),
            "series_count": len({r[0] for r in self.rows}),
            "decomposition_max_residual": max(res) if res else None,
            "substitutions": self.substitutions,
            "failures": self.failures,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"
