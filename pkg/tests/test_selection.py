import math

import numpy as np
import pytest

from featurecast.core import RngStream, ValidationError
from featurecast.selection import (
    EmptySelectionError,
    cluster_select,
    correlation_distance,
    prefilter,
    rrelieff,
    select_features,
)


def _rrelieff_loop(X, y, k, picks):
    """Scalar re-implementation used as an oracle."""
    n, p = X.shape
    mu, sd = X.mean(0), X.std(0)
    sd[sd == 0] = 1
    Z = (X - mu) / sd
    span = [max(Z[:, a].max() - Z[:, a].min(), 0) or 1.0 for a in range(p)]
    yspan = (y.max() - y.min()) or 1.0
    sigma = k / 3
    raw = [math.exp(-((r / sigma) ** 2)) for r in range(1, k + 1)]
    infl = [v / sum(raw) for v in raw]
    ndc, nda, ndcda = 0.0, [0.0] * p, [0.0] * p
    for i in picks:
        d = [(math.dist(Z[i], Z[j]), j) for j in range(n) if j != i]
        d.sort()
        for r, (_, j) in enumerate(d[:k]):
            dy = abs(y[i] - y[j]) / yspan
            ndc += infl[r] * dy
            for a in range(p):
                da = abs(Z[i, a] - Z[j, a]) / span[a]
                nda[a] += infl[r] * da
                ndcda[a] += infl[r] * dy * da
    m = len(picks)
    return [ndcda[a] / ndc - (nda[a] - ndcda[a]) / (m - ndc) for a in range(p)]


def test_rrelieff_matches_scalar_oracle():
    g = np.random.default_rng(0)
    X = g.normal(size=(40, 3))
    y = X[:, 0] * 2 + g.normal(0, 0.1, 40)
    scores = rrelieff((["a", "b", "c"], X), y, 5, 40, RngStream(1))
    picks = RngStream(1).permutation(40)[:40]
    oracle = _rrelieff_loop(X, y, 5, picks)
    np.testing.assert_allclose([scores[c] for c in "abc"], oracle, atol=1e-12)
    assert max(scores, key=scores.get) == "a"
    assert all(-1 <= v <= 1 for v in scores.values())


def test_rrelieff_planted_copy_ranks_first():
    g = np.random.default_rng(5)
    X = g.normal(size=(200, 6))
    y = X[:, 3].copy()
    scores = rrelieff(([f"f{i}" for i in range(6)], X), y, 10, 200, RngStream(2))
    assert max(scores, key=scores.get) == "f3"


def test_rrelieff_null_target_scores_near_zero():
    g = np.random.default_rng(6)
    X = g.normal(size=(200, 5))
    y = g.normal(size=200)
    scores = rrelieff(([f"f{i}" for i in range(5)], X), y, 10, 200, RngStream(3))
    assert all(abs(v) <= 0.1 for v in scores.values())


def test_rrelieff_needs_enough_rows():
    with pytest.raises(ValidationError):
        rrelieff((["a"], np.zeros((3, 1))), [0, 1, 2], 5, 3, RngStream(0))


def test_prefilter_drops_constant_and_binary_degenerate():
    rows = [{"a": float(i), "b": 1.0, "c": float(i == 0)} for i in range(30)]
    assert prefilter(rows) == ["a"]
    with pytest.raises(EmptySelectionError):
        prefilter([{"b": 1.0} for _ in range(5)])


def test_three_features_two_clusters():
    g = np.random.default_rng(7)
    a = g.normal(size=500)
    b = 0.9 * a + math.sqrt(1 - 0.81) * g.normal(size=500)
    c = g.normal(size=500)
    X = np.c_[a, b, c]
    D = correlation_distance(X)
    # Brute-force complete linkage on three points: merge the closest pair,
    # then the third joins only if its max distance to the pair is below the cut.
    assert D[0, 1] < 0.2 < min(max(D[0, 2], D[1, 2]), 1.0)
    rep = cluster_select((["a", "b", "c"], X), {"a": 0.1, "b": 0.3, "c": 0.2})
    assert rep.clusters == [["a", "b"], ["c"]]
    assert rep.chosen == ["b", "c"]


def test_perfectly_correlated_pair_keeps_one():
    g = np.random.default_rng(8)
    a = g.normal(size=100)
    X = np.c_[a, -3 * a + 1, g.normal(size=100)]
    rep = cluster_select((["a", "neg", "z"], X), {"a": 0.5, "neg": 0.5, "z": 0.0})
    assert ["a", "neg"] in rep.clusters
    assert rep.chosen.count("a") + rep.chosen.count("neg") == 1
    assert "a" in rep.chosen  # tie goes to the first name


def test_select_features_end_to_end():
    g = np.random.default_rng(9)
    rows = []
    for _ in range(80):
        s = g.normal()
        rows.append({"signal": s, "copy": 2 * s, "noise": g.normal(), "const": 1.0})
    y = [r["signal"] for r in rows]
    rep = select_features(rows, y, RngStream(4), k=5)
    assert "const" not in rep.surviving
    assert ["signal", "copy"] in rep.clusters
    assert len(rep.chosen) == 2
    d = rep.to_dict()
    assert set(d) == {"surviving", "quality", "clusters", "chosen_per_cluster"}
