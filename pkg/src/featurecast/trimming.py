"""Forecast pool trimming: robustness filter, then greedy accuracy-diversity removal."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ValidationError


class RosterMismatchError(ValidationError):
    pass


@dataclass(frozen=True)
class TrimConfig:
    kappa: float = 0.5
    min_pool: int = 2
    significance_epsilon: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ValidationError("kappa must lie in [0, 1]")
        if self.min_pool < 2:
            raise ValidationError("min_pool must be >= 2")
        if self.significance_epsilon < 0:
            raise ValidationError("significance_epsilon must be nonnegative")


@dataclass
class TrimResult:
    kept: list
    removed_by_robustness: list
    removal_trace: list = field(default_factory=list)  # (method, ADT after removal)
    initial_adt: float = math.nan
    final_adt: float = math.nan

    def to_dict(self) -> dict:
        return {
            "kept": list(self.kept),
            "removed_by_robustness": list(self.removed_by_robustness),
            "initial_adt": self.initial_adt,
            "removal_trace": [{"removed": m, "adt_after": a} for m, a in self.removal_trace],
            "final_adt": self.final_adt,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def adt(mse: Sequence[float], msec, kappa: float = 0.5) -> float:
    """AvgMSE - kappa * AvgMSEC, where AvgMSEC sums the upper triangle over M^2."""
    mse = np.asarray(mse, dtype=float)
    msec = np.asarray(getattr(msec, "raw", msec), dtype=float)
    M = mse.size
    if M < 2:
        raise ValidationError("ADT needs at least two methods")
    if msec.shape != (M, M):
        raise ValidationError(f"MSEC matrix shape {msec.shape} does not match {M} methods")
    avg_msec = float(np.sum(np.triu(msec, 1))) / (M * M)
    return float(mse.mean()) - kappa * avg_msec


def type7_quantile(values: Sequence[float], q: float) -> float:
    """Linear interpolation between order statistics."""
    return float(np.quantile(np.asarray(values, dtype=float), q, method="linear"))


def tukey_robustness_filter(variances: Sequence[float], names: Sequence[str] | None = None):
    """Drop methods whose absolute-error variance exceeds Q3 + 1.5 IQR.

    At least two methods always survive (the lowest-variance ones are kept).
    Returns ``(kept, removed)`` in input order.
    """
    v = np.asarray(variances, dtype=float)
    names = list(names) if names is not None else list(range(v.size))
    if v.size < 2:
        raise ValidationError("robustness filter needs at least two methods")
    q1, q3 = type7_quantile(v, 0.25), type7_quantile(v, 0.75)
    fence = q3 + 1.5 * (q3 - q1)
    out = set(np.flatnonzero(v > fence).tolist())
    if v.size - len(out) < 2:
        by_var = sorted(range(v.size), key=lambda i: (v[i], i))
        out -= set(by_var[:2])
    kept = [names[i] for i in range(v.size) if i not in out]
    removed = [names[i] for i in range(v.size) if i in out]
    return kept, removed


def pool_statistics(bundles, validations):
    """Per-method MSE, pairwise MSEC and absolute-error variance over a collection.

    MSE and MSEC are means over series of per-series values; the variance is
    taken over all pooled absolute errors.
    """
    bundles = list(bundles)
    if not bundles:
        raise ValidationError("need at least one series")
    roster = bundles[0].methods
    M = len(roster)
    mse = np.zeros(M)
    msec = np.zeros((M, M))
    abs_err = []
    for b, y in zip(bundles, validations, strict=True):
        if b.methods != roster:
            raise RosterMismatchError("all bundles must share the same roster in the same order")
        F = b.points
        y = np.asarray(y, dtype=float)
        if F.shape[1] != y.size:
            raise ValidationError("validation length does not match the forecast horizon")
        err = F - y
        mse += np.mean(err * err, axis=1)
        diff = F[:, None, :] - F[None, :, :]
        msec += np.mean(diff * diff, axis=2)
        abs_err.append(np.abs(err))
    n = len(bundles)
    variances = np.var(np.concatenate(abs_err, axis=1), axis=1)
    return list(roster), mse / n, msec / n, variances


def rad(bundles, validations, config: TrimConfig = TrimConfig()) -> TrimResult:
    """Robustness filter followed by greedy ADT-minimizing removals.

    Each step removes the method whose removal gives the lowest ADT (ties go
    to the higher-MSE method, then roster order).  The loop stops when the
    relative ADT reduction versus the current pool drops below
    ``significance_epsilon`` or the pool reaches ``min_pool``.
    """
    roster, mse, msec, variances = pool_statistics(bundles, validations)
    kept, removed = tukey_robustness_filter(variances, roster)
    return greedy_trim(roster, mse, msec, config, start=kept, removed_by_robustness=removed)


def greedy_trim(roster, mse, msec, config: TrimConfig, *, start=None, removed_by_robustness=()) -> TrimResult:
    roster = list(roster)
    mse = np.asarray(mse, dtype=float)
    msec = np.asarray(msec, dtype=float)
    pool = list(start) if start is not None else list(roster)
    idx = {m: i for i, m in enumerate(roster)}

    def adt_of(members):
        ix = [idx[m] for m in members]
        return adt(mse[ix], msec[np.ix_(ix, ix)], config.kappa)

    current = adt_of(pool)
    result = TrimResult(pool, list(removed_by_robustness), [], current, current)
    while len(pool) > max(config.min_pool, 2):
        cands = []
        for pos, m in enumerate(pool):
            rest = pool[:pos] + pool[pos + 1 :]
            cands.append((adt_of(rest), -mse[idx[m]], roster.index(m), m, rest))
        new_adt, _, _, drop, rest = min(cands, key=lambda c: c[:3])
        reduction = current - new_adt
        if current != 0.0:
            rel = reduction / abs(current)
        else:
            rel = math.inf if reduction > 0 else 0.0
        if not rel >= config.significance_epsilon or reduction <= 0:
            break
        pool, current = rest, new_adt
        result.removal_trace.append((drop, new_adt))
    result.kept = pool
    result.final_adt = current
    return result
