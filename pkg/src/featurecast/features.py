"""Scale-free series features and forecast-diversity features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import SeriesTooShortError, TimeSeries, ValidationError, min_history

CATALOG = (
    "length_log",
    "trend_strength",
    "seasonal_strength",
    "acf1_x",
    "acf1_diff1",
    "acf1_diff2",
    "acf1_seasdiff",
    "acf10_sumsq",
    "spectral_entropy",
    "stability",
    "lumpiness",
    "nonzero_cv",
    "zero_proportion",
    "adi",
    "recency",
)


class ConstantSeriesError(ValidationError):
    pass


class DegeneratePoolError(ValidationError):
    pass


class FeatureVector(dict):
    """Ordered ``name -> float`` mapping; insertion order is catalog order."""

    def to_array(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = list(self) if names is None else names
        return np.array([self[n] for n in names], dtype=float)


def acf(values, lag: int) -> float:
    """Sample autocorrelation at ``lag`` (global mean, biased denominator)."""
    y = np.asarray(values, dtype=float)
    if lag < 1 or y.size <= lag:
        raise ValidationError("need 1 <= lag < len(values)")
    d = y - y.mean()
    denom = float(d @ d)
    if denom == 0.0:
        raise ConstantSeriesError("autocorrelation undefined for a constant sequence")
    return float(d[:-lag] @ d[lag:]) / denom


def _is_flat(y: np.ndarray) -> bool:
    # Relative test so that rescaled near-constant inputs behave the same.
    if y.size < 2:
        return True
    scale = np.max(np.abs(y))
    return scale == 0.0 or np.std(y) <= 1e-10 * scale


def _acf_or_zero(y: np.ndarray, lag: int) -> float:
    if y.size <= lag or _is_flat(y):
        return 0.0
    return acf(y, lag)


def _centered_ma(y: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; 2xw average for even windows. NaN at the ends."""
    n = y.size
    out = np.full(n, np.nan)
    if window % 2 == 1:
        h = window // 2
        if n < window:
            return out
        c = np.convolve(y, np.ones(window) / window, mode="valid")
        out[h : n - h] = c
    else:
        h = window // 2
        if n < window + 1:
            return out
        k = np.r_[0.5, np.ones(window - 1), 0.5] / window
        c = np.convolve(y, k, mode="valid")
        out[h : n - h] = c
    return out


def decompose(series: TimeSeries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Classical additive moving-average decomposition.

    Returns ``(trend, seasonal, remainder)``; trend and remainder are NaN
    where the moving average is undefined.
    """
    y = series.values
    T, m = y.size, series.period
    if T < min_history(m):
        raise SeriesTooShortError(series.id, T, min_history(m))
    if m == 1:
        w = min(T, 13)
        if w % 2 == 0:
            w -= 1
        trend = _centered_ma(y, w)
        seasonal = np.zeros(T)
    else:
        trend = _centered_ma(y, m)
        detr = y - trend
        idx = np.arange(T) % m
        means = np.array([np.nanmean(detr[idx == j]) for j in range(m)])
        means -= means.mean()
        seasonal = means[idx]
    return trend, seasonal, y - trend - seasonal


def _strength(remainder: np.ndarray, other: np.ndarray) -> float:
    ok = ~np.isnan(remainder)
    vr = np.var(remainder[ok])
    vo = np.var(other[ok])
    if vo == 0.0 or vo <= 1e-20 * np.mean(other[ok] ** 2):
        return 0.0
    return float(min(1.0, max(0.0, 1.0 - vr / vo)))


def strength_of_trend_seasonality(series: TimeSeries) -> tuple[float, float]:
    trend, seasonal, rem = decompose(series)
    if _is_flat(series.values):
        return 0.0, 0.0
    ts = _strength(rem, trend + rem)
    ss = 0.0 if series.period == 1 else _strength(rem, seasonal + rem)
    return ts, ss


def spectral_entropy(y: np.ndarray) -> float:
    """Normalized Shannon entropy of the 3-point smoothed periodogram."""
    if _is_flat(y):
        return 0.0
    d = y - y.mean()
    pgram = np.abs(np.fft.rfft(d))[1:] ** 2
    if pgram.size < 2:
        return 0.0
    padded = np.r_[pgram[0], pgram, pgram[-1]]
    smooth = (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0
    p = smooth / smooth.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum() / np.log(smooth.size))


def _tiles(z: np.ndarray, width: int) -> list[np.ndarray]:
    return [z[i : i + width] for i in range(0, z.size, width)]


def stability_lumpiness(y: np.ndarray, period: int) -> tuple[float, float]:
    if _is_flat(y):
        return 0.0, 0.0
    z = (y - y.mean()) / y.std()
    tiles = _tiles(z, period if period > 1 else 10)
    if len(tiles) < 2:
        return 0.0, 0.0
    means = np.array([t.mean() for t in tiles])
    variances = np.array([t.var() for t in tiles])
    return float(means.var()), float(variances.var())


def intermittency(y: np.ndarray) -> tuple[float, float, float, float]:
    """``(nonzero_cv, zero_proportion, adi, recency)``."""
    T = y.size
    nz = np.flatnonzero(y != 0.0)
    zero_prop = 1.0 - nz.size / T
    if nz.size == 0:
        return 0.0, zero_prop, float(T), 0.0
    sizes = y[nz]
    cv = float(sizes.std() / np.mean(np.abs(sizes))) if nz.size >= 2 else 0.0
    adi = T / nz.size
    recency = (nz[-1] + 1) / T
    return cv, zero_prop, float(adi), float(recency)


def extract(series: TimeSeries) -> FeatureVector:
    """Compute the full catalog for one series, in catalog order."""
    y = series.values
    T, m = y.size, series.period
    if T < min_history(m):
        raise SeriesTooShortError(series.id, T, min_history(m))
    trend_s, seas_s = strength_of_trend_seasonality(series)
    d1 = np.diff(y)
    d2 = np.diff(y, 2)
    sd = y[m:] - y[:-m]
    if _is_flat(y):
        acfs = np.zeros(10)
    else:
        acfs = np.array([acf(y, k) for k in range(1, min(10, T - 1) + 1)])
    stab, lump = stability_lumpiness(y, m)
    cv, zp, adi, rec = intermittency(y)
    fv = FeatureVector(
        length_log=float(np.log(T)),
        trend_strength=trend_s,
        seasonal_strength=seas_s,
        acf1_x=float(acfs[0]),
        acf1_diff1=_acf_or_zero(d1, 1),
        acf1_diff2=_acf_or_zero(d2, 1),
        acf1_seasdiff=_acf_or_zero(sd, 1),
        acf10_sumsq=float(np.sum(acfs**2)),
        spectral_entropy=spectral_entropy(y),
        stability=stab,
        lumpiness=lump,
        nonzero_cv=cv,
        zero_proportion=zp,
        adi=adi,
        recency=rec,
    )
    assert tuple(fv) == CATALOG
    return fv


# --- forecast diversity --------------------------------------------------------


@dataclass(frozen=True)
class DiversityMatrix:
    methods: tuple
    raw: np.ndarray
    scaled: np.ndarray

    def flatten(self) -> FeatureVector:
        """Row-major upper triangle of ``scaled``, M(M-1)/2 entries."""
        out = FeatureVector()
        M = len(self.methods)
        for i in range(M):
            for j in range(i + 1, M):
                out[f"div_{self.methods[i]}_{self.methods[j]}"] = float(self.scaled[i, j])
        return out


def diversity_feature_names(methods: Sequence[str]) -> list[str]:
    M = len(methods)
    return [f"div_{methods[i]}_{methods[j]}" for i in range(M) for j in range(i + 1, M)]


def diversity(forecasts, methods: Sequence[str] | None = None, *, strict: bool = False) -> DiversityMatrix:
    """Pairwise MSEC and its normalized form from an M x H forecast matrix.

    ``forecasts`` may be a ForecastBundle or an array; with an array,
    ``methods`` names its rows.
    """
    if hasattr(forecasts, "points"):
        methods = forecasts.methods
        F = np.asarray(forecasts.points, dtype=float)
    else:
        F = np.atleast_2d(np.asarray(forecasts, dtype=float))
        methods = tuple(methods) if methods is not None else tuple(f"m{i}" for i in range(F.shape[0]))
    M, H = F.shape
    if M < 2:
        raise ValidationError("diversity needs at least two methods")
    if not np.all(np.isfinite(F)):
        raise ValidationError("forecasts must be finite")
    diff = F[:, None, :] - F[None, :, :]
    sums = np.sum(diff * diff, axis=2)
    raw = sums / H
    total = float(np.sum(np.triu(sums, 1)))
    if total > 0:
        scaled = sums / total
    else:
        if strict:
            raise DegeneratePoolError("all methods produced identical forecasts")
        scaled = np.zeros_like(sums)
    return DiversityMatrix(tuple(methods), raw, scaled)
