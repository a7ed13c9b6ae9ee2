"""CART regression trees and a bagged ensemble, stored as flat node arrays."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RngStream, ValidationError

LEAF = -1


@dataclass
class RegressionTree:
    """Binary tree in parallel arrays; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def node_count(self) -> int:
        return self.feature.size

    def depth(self) -> int:
        def walk(i):
            if self.feature[i] == LEAF:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] != LEAF
        while np.any(active):
            n = node[active]
            go_left = X[active, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] != LEAF
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
            np.asarray(d["n_samples"], dtype=np.int64),
        )


def _best_split(x: np.ndarray, y: np.ndarray, min_leaf: int):
    """Exhaustive scan of thresholds between sorted unique values.

    Returns ``(gain, threshold)`` where gain is the reduction in squared
    error, or ``None`` if no admissible split exists.
    """
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = ys.size
    csum = np.cumsum(ys)
    csq = np.cumsum(ys * ys)
    total, total_sq = csum[-1], csq[-1]
    # Candidate cut after position i (left = 0..i), needs distinct neighbours.
    i = np.arange(min_leaf - 1, n - min_leaf)
    if i.size == 0:
        return None
    i = i[xs[i] < xs[i + 1]]
    if i.size == 0:
        return None
    nl = i + 1.0
    nr = n - nl
    sl, sr = csum[i], total - csum[i]
    sse = (csq[i] - sl * sl / nl) + ((total_sq - csq[i]) - sr * sr / nr)
    parent = total_sq - total * total / n
    k = int(np.argmin(sse))
    gain = parent - sse[k]
    return gain, 0.5 * (xs[i[k]] + xs[i[k] + 1])


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    *,
    max_depth: int,
    min_leaf: int,
    max_features: int | None,
    rng: RngStream,
) -> RegressionTree:
    """Grow a variance-reduction tree depth first.

    At every split ``max_features`` candidate columns are drawn without
    replacement; ``None`` uses all columns.
    """
    n, p = X.shape
    if n < 1:
        raise ValidationError("cannot fit a tree on zero rows")
    mf = p if max_features is None else max(1, min(p, int(max_features)))
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(rows):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(np.mean(y[rows])))
        count.append(int(rows.size))
        return len(feature) - 1

    stack = [(new_node(np.arange(n)), np.arange(n), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if depth >= max_depth or rows.size < 2 * min_leaf:
            continue
        yr = y[rows]
        if np.all(yr == yr[0]):
            continue
        cols = rng.permutation(p)[:mf] if mf < p else np.arange(p)
        best = None
        for c in cols:
            s = _best_split(X[rows, c], yr, min_leaf)
            if s is not None and s[0] > 1e-12 and (best is None or s[0] > best[0]):
                best = (s[0], s[1], int(c))
        if best is None:
            continue
        _, thr, c = best
        mask = X[rows, c] <= thr
        lrows, rrows = rows[mask], rows[~mask]
        feature[node] = c
        threshold[node] = float(thr)
        li = new_node(lrows)
        ri = new_node(rrows)
        left[node], right[node] = li, ri
        # Right pushed first so the left subtree is built first.
        stack.append((ri, rrows, depth + 1))
        stack.append((li, lrows, depth + 1))

    return RegressionTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float),
        np.asarray(count, dtype=np.int64),
    )


@dataclass
class BaggedTrees:
    trees: list
    oob_prediction: np.ndarray | None = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.mean([t.predict(X) for t in self.trees], axis=0)


def fit_bagged(
    X: np.ndarray,
    y: np.ndarray,
    *,
    n_trees: int = 100,
    max_depth: int = 6,
    min_leaf: int = 5,
    max_features: int | None = None,
    row_subsample: float = 1.0,
    rng: RngStream,
) -> BaggedTrees:
    """Bootstrap-aggregated trees; tree ``b`` uses stream ``rng.spawn(b)``.

    Also records out-of-bag predictions (in-bag mean for rows never left out).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if max_features is None:
        max_features = math.ceil(math.sqrt(p))
    draws = max(1, int(round(row_subsample * n)))
    trees = []
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    for b in range(n_trees):
        sub = rng.spawn(b)
        rows = sub.integers(0, n, size=draws)
        tree = fit_tree(X[rows], y[rows], max_depth=max_depth, min_leaf=min_leaf,
                        max_features=max_features, rng=sub)
        trees.append(tree)
        out = np.ones(n, dtype=bool)
        out[rows] = False
        if np.any(out):
            oob_sum[out] += tree.predict(X[out])
            oob_cnt[out] += 1
    model = BaggedTrees(trees)
    full = model.predict(X)
    model.oob_prediction = np.where(oob_cnt > 0, oob_sum / np.maximum(oob_cnt, 1), full)
    return model
