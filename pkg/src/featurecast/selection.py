"""Three-step automatic feature selection.

1. ``prefilter`` drops features that barely vary across series.
2. ``rrelieff`` scores each survivor against a per-series performance target.
3. ``cluster_select`` groups strongly correlated features and keeps the
   best-scoring one per group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from .core import RngStream, ValidationError

CLUSTER_CUT = 0.2


class EmptySelectionError(ValidationError):
    pass


@dataclass
class SelectionReport:
    surviving: list
    quality: dict
    clusters: list
    chosen: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "surviving": list(self.surviving),
            "quality": {k: float(v) for k, v in self.quality.items()},
            "clusters": [list(c) for c in self.clusters],
            "chosen_per_cluster": list(self.chosen),
        }


def _as_matrix(table, names: Sequence[str] | None = None) -> tuple[list[str], np.ndarray]:
    """Accept a list of mappings or ``(names, array)`` and return both."""
    if isinstance(table, tuple):
        cols, X = table
        X = np.asarray(X, dtype=float)
        cols = list(cols)
        if names is not None:
            X = X[:, [cols.index(n) for n in names]]
            cols = list(names)
        return cols, X
    rows = list(table)
    if not rows:
        raise ValidationError("empty feature table")
    cols = list(names) if names is not None else list(rows[0])
    X = np.array([[float(r[c]) for c in cols] for r in rows])
    return cols, X


def zscore(X: np.ndarray) -> np.ndarray:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mu) / sd


def prefilter(table, *, min_std: float = 1e-8) -> list[str]:
    """Names of features that vary across series."""
    cols, X = _as_matrix(table)
    if X.shape[0] < 2:
        raise ValidationError("prefilter needs at least two series")
    sd = X.std(axis=0)
    Z = zscore(X)
    q10, q90 = np.percentile(Z, [10, 90], axis=0)
    keep = [c for j, c in enumerate(cols) if sd[j] >= min_std and q10[j] != q90[j]]
    if not keep:
        raise EmptySelectionError("no feature survived the pre-filter")
    return keep


def rrelieff(
    table,
    target: Sequence[float],
    k: int,
    sample_count: int,
    rng: RngStream,
    *,
    names: Sequence[str] | None = None,
    sigma: float | None = None,
) -> dict:
    """Regressional ReliefF feature scores.

    For each sampled instance, its ``k`` nearest neighbours (Euclidean on
    z-scored features) contribute with weight ``exp(-(rank/sigma)^2)``,
    normalized over the neighbours.  ``sigma`` defaults to ``k / 3``.
    Feature and target differences are range-normalized, so every score lies
    in [-1, 1].
    """
    cols, X = _as_matrix(table, names)
    y = np.asarray(target, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ValidationError("target length must match the number of series")
    if k < 1 or n < k + 1:
        raise ValidationError(f"rrelieff needs at least k+1={k + 1} series, got {n}")
    if sample_count < 1:
        raise ValidationError("sample_count must be >= 1")

    Z = zscore(X)
    span = Z.max(axis=0) - Z.min(axis=0)
    span = np.where(span > 0, span, 1.0)
    yspan = y.max() - y.min()
    yspan = yspan if yspan > 0 else 1.0

    if sigma is None:
        sigma = k / 3.0
    ranks = np.arange(1, k + 1, dtype=float)
    infl = np.exp(-((ranks / sigma) ** 2))
    infl /= infl.sum()

    if sample_count <= n:
        picks = rng.permutation(n)[:sample_count]
    else:
        picks = rng.integers(0, n, size=sample_count)

    n_dc = 0.0
    n_da = np.zeros(p)
    n_dcda = np.zeros(p)
    for i in picks:
        dist = np.sqrt(np.sum((Z - Z[i]) ** 2, axis=1))
        dist[i] = np.inf
        # Stable sort: ties resolved by row order.
        nbrs = np.argsort(dist, kind="stable")[:k]
        dy = np.abs(y[nbrs] - y[i]) / yspan
        dA = np.abs(Z[nbrs] - Z[i]) / span
        n_dc += float(dy @ infl)
        n_da += infl @ dA
        n_dcda += (infl * dy) @ dA

    m = float(len(picks))
    if n_dc == 0.0 or n_dc == m:
        return {c: 0.0 for c in cols}
    w = n_dcda / n_dc - (n_da - n_dcda) / (m - n_dc)
    return {c: float(v) for c, v in zip(cols, w)}


def correlation_distance(X: np.ndarray) -> np.ndarray:
    """``1 - |pearson|`` between columns; constant columns are at distance 1."""
    p = X.shape[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.corrcoef(X, rowvar=False) if p > 1 else np.ones((1, 1))
    r = np.atleast_2d(r)
    D = 1.0 - np.abs(r)
    D[np.isnan(D)] = 1.0
    D = np.clip((D + D.T) / 2.0, 0.0, 1.0)
    np.fill_diagonal(D, 0.0)
    return D


def cluster_select(table, quality: Mapping[str, float], *, cut: float = CLUSTER_CUT) -> SelectionReport:
    """Complete-linkage clustering on ``1 - |pearson|`` cut at ``cut``.

    Features are the keys of ``quality`` in table order.  Each cluster keeps
    its highest-quality member, first name on ties.
    """
    cols_all, _ = _as_matrix(table)
    names = [c for c in cols_all if c in quality]
    if len(names) < 2:
        raise ValidationError("cluster_select needs at least two features")
    _, X = _as_matrix(table, names)
    D = correlation_distance(X)
    Z = linkage(squareform(D, checks=False), method="complete")
    labels = fcluster(Z, t=cut, criterion="distance")

    clusters: list[list[str]] = []
    seen: dict[int, int] = {}
    for name, lab in zip(names, labels):
        if lab not in seen:
            seen[lab] = len(clusters)
            clusters.append([])
        clusters[seen[lab]].append(name)
    chosen = [max(c, key=lambda nm: (quality[nm], -names.index(nm))) for c in clusters]
    return SelectionReport(names, dict(quality), clusters, chosen)


def select_features(table, target, rng: RngStream, *, k: int = 10, sample_count: int | None = None) -> SelectionReport:
    """Run pre-filter, RReliefF and clustering end to end."""
    surviving = prefilter(table)
    cols, X = _as_matrix(table, surviving)
    n = X.shape[0]
    k = min(k, n - 1)
    quality = rrelieff((cols, X), target, k, sample_count or n, rng)
    if len(surviving) == 1:
        return SelectionReport(surviving, quality, [surviving], list(surviving))
    report = cluster_select((cols, X), quality)
    report.surviving = surviving
    return report
