"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import itertools
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from featurecast.core import RngStream, TimeSeries
from featurecast.features import diversity, extract
from featurecast.generator import (
    DivergenceError,
    GaConfig,
    ga_search,
    generate_dataset,
    sample_mar_spec,
    simulate,
    _feature_distance,
)
from featurecast.metalearn import (
    MetaHyper,
    collect_records,
    fit,
    objective,
    oracle_objective,
    predict_weights,
    table_from_records,
    uniform_objective,
)
from featurecast.pool import ForecastBundle
from featurecast.metrics import mase, mse_decomposition, msis, rmsse
from featurecast.selection import cluster_select, rrelieff
from featurecast.trimming import TrimConfig, greedy_trim, rad

pytestmark = pytest.mark.acceptance

# Calibrated from 20 seeded oracle runs of 500 series (K=3, lengths 60-120,
# period 1): observed trend-strength sd ranged 0.098..0.134.
TREND_SD_FLOOR = 0.09


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, detail


def test_c01_decomposition_identity():
    t0 = time.perf_counter()
    g = np.random.default_rng(101)
    worst, bound_ok = 0.0, True
    for _ in range(1000):
        M, H = int(g.integers(1, 7)), int(g.integers(1, 13))
        F = g.normal(size=(M, H)) * g.uniform(0.1, 100)
        y = g.normal(size=H) * g.uniform(0.1, 100)
        w = g.dirichlet(np.ones(M))
        comb, weighted, div = mse_decomposition(F, w, y)
        worst = max(worst, abs(comb - (weighted - div)) / max(weighted, 1e-300))
        bound_ok &= comb <= weighted * (1 + 1e-12)
    dt = time.perf_counter() - t0
    record(1, worst <= 1e-9 and bound_ok and dt < 5,
           f"max rel residual {worst:.2e}, bound holds={bound_ok}, {dt:.2f}s")


def test_c02_diversity_normalization():
    g = np.random.default_rng(102)
    worst, shape_ok = 0.0, True
    for _ in range(1000):
        M, H = int(g.integers(2, 9)), int(g.integers(1, 13))
        F = g.normal(size=(M, H)) * g.uniform(0.01, 1000)
        d = diversity(F)
        worst = max(worst, abs(np.triu(d.scaled, 1).sum() - 1.0))
        shape_ok &= bool(np.array_equal(d.scaled, d.scaled.T) and np.all(np.diag(d.scaled) == 0))
    record(2, worst <= 1e-9 and shape_ok, f"max |sum-1| {worst:.2e}, symmetric/zero-diagonal={shape_ok}")


def _adt_by_hand(mse, msec, members, kappa):
    M = len(members)
    pair = sum(msec[(i, j)] for i, j in itertools.combinations(members, 2))
    return sum(mse[i] for i in members) / M - kappa * pair / M**2


def test_c03_adt_rad():
    names = ["a", "b", "c"]
    mismatches = kappa0_bad = 0
    cases = 0
    for mse in itertools.product((1.0, 2.0, 3.0), repeat=3):
        for m01, m02, m12 in itertools.product((0.0, 1.0, 4.0), repeat=3):
            msec = {(0, 1): m01, (0, 2): m02, (1, 2): m12}
            mat = np.zeros((3, 3))
            for (i, j), v in msec.items():
                mat[i, j] = mat[j, i] = v
            for kappa in (0.0, 0.5, 1.0):
                cases += 1
                res = greedy_trim(names, mse, mat, TrimConfig(kappa, 2, 0.01))
                # Enumerate every removal sequence (here: none, or drop one).
                full = _adt_by_hand(mse, msec, [0, 1, 2], kappa)
                seqs = sorted((_adt_by_hand(mse, msec, [i for i in range(3) if i != d], kappa), -mse[d], d)
                              for d in range(3))
                best, _, drop = seqs[0]
                red = full - best
                rel = red / abs(full) if full else (math.inf if red > 0 else 0.0)
                expect = names if not (red > 0 and rel >= 0.01) else [n for i, n in enumerate(names) if i != drop]
                mismatches += res.kept != expect
                if kappa == 0.0 and res.removal_trace:
                    kappa0_bad += mse[names.index(res.removal_trace[0][0])] != max(mse)

    g = np.random.default_rng(103)
    floor_bad = 0
    for run in range(300):
        M, H, N = int(g.integers(2, 10)), int(g.integers(1, 8)), int(g.integers(1, 6))
        bundles, vals = [], []
        for _ in range(N):
            y = g.normal(size=H)
            F = y + g.normal(size=(M, H)) * g.uniform(0.01, 20, size=(M, 1))
            bundles.append(ForecastBundle(tuple(f"m{i}" for i in range(M)), F, F - 1, F + 1, 0.05))
            vals.append(y)
        res = rad(bundles, vals, TrimConfig(float(g.uniform()), 2, float(g.choice([0.0, 0.01]))))
        floor_bad += len(res.kept) < 2
    record(3, mismatches == 0 and kappa0_bad == 0 and floor_bad == 0,
           f"{cases} toy pools, {mismatches} oracle mismatches, {kappa0_bad} kappa=0 violations, "
           f"{floor_bad}/300 fuzz runs below 2 kept")


def test_c04_metric_invariances():
    g = np.random.default_rng(104)
    worst = 0.0
    for _ in range(200):
        hist = g.normal(size=50).cumsum() + 20
        y, f = g.normal(size=6) + 20, g.normal(size=6) + 20
        lo, hi = f - g.uniform(0, 2, 6), f + g.uniform(0, 2, 6)
        base = (rmsse(y, f, hist), mase(y, f, hist, 4), msis(y, lo, hi, hist, 0.05, 4))
        for c in (1e-3, 1.0, 1e4):
            scaled = (rmsse(c * y, c * f, c * hist), mase(c * y, c * f, c * hist, 4),
                      msis(c * y, c * lo, c * hi, c * hist, 0.05, 4))
            worst = max(worst, max(abs(a - b) / max(abs(a), 1.0) for a, b in zip(base, scaled)))
    plug = msis([3.0], [0.0], [2.0], np.tile([0.0, 1.0], 5), 0.05, 1)
    record(4, worst <= 1e-12 and abs(plug - 42.0) <= 1e-12,
           f"max relative change {worst:.2e}; MSIS plug-in {plug!r}")


def test_c05_generator_reproducibility_and_diversity():
    a = generate_dataset(500, (60, 120), 1, 3, RngStream(2024, 5))
    b = generate_dataset(500, (60, 120), 1, 3, RngStream(2024, 5))
    identical = all(x.id == y.id and x.values.tobytes() == y.values.tobytes() for x, y in zip(a, b))
    sd = float(np.std([extract(s)["trend_strength"] for s in a]))
    weights_ok = all(
        abs(sum(sample_mar_spec(RngStream(9).spawn(i), int(K), 3).weights) - 1) <= 1e-12
        for i, K in enumerate(np.resize(np.arange(1, 7), 2000))
    )
    record(5, identical and sd > TREND_SD_FLOOR and weights_ok,
           f"bit-identical={identical}, trend-strength sd {sd:.4f} (floor {TREND_SD_FLOOR}), "
           f"2000 specs on simplex={weights_ok}")


GA_FEATURES = ("trend_strength", "acf1_x", "acf1_diff1", "spectral_entropy")


@pytest.mark.slow
def test_c06_ga_target_matching():
    within = elitist = 0
    slowest = 0.0
    fresh = []
    for seed in range(20):
        r = RngStream(seed, 6)
        while True:
            spec = sample_mar_spec(r.spawn(0), 2, 3)
            try:
                ref = simulate(spec, 120, None, r.spawn(1))
                break
            except DivergenceError:
                r = r.spawn(9)
        fv = extract(ref)
        target = {n: fv[n] for n in GA_FEATURES}
        t0 = time.perf_counter()
        res = ga_search(GaConfig(target, K=2), 1, 120, r.spawn(2))
        slowest = max(slowest, time.perf_counter() - t0)
        within += res.distance <= 0.1
        elitist += res.distance <= res.initial_best
        # Re-score the returned spec on unseen simulations (informational).
        fresh.append(_feature_distance(res.spec, list(GA_FEATURES), np.array(list(target.values())),
                                       120, 1, 16, r.spawn(3)))
    fresh_ok = int(np.sum(np.array(fresh) <= 0.1))
    record(6, elitist == 20 and within >= 16 and slowest < 60,
           f"elitism {elitist}/20, distance<=0.1 in {within}/20, slowest {slowest:.1f}s; "
           f"fresh re-score <=0.1 in {fresh_ok}/20")


def _family(kind, i, rng, length=96):
    t = np.arange(length)
    if kind == "A":
        phase = rng.uniform(0, 2 * np.pi)
        y = 10 * np.sin(2 * np.pi * t / 12 + phase) + rng.normal(0, 0.5, length) + 50
    else:
        y = 50 + np.cumsum(rng.normal(0, 0.1, length)) + rng.normal(0, 3.0, length)
    return TimeSeries(f"{kind}{i:03d}", 12, y)


@pytest.mark.slow
def test_c07_separability():
    roster = ("seasonal_naive", "ses")
    g = np.random.default_rng(107)
    train = [_family("AB"[i % 2], i, g) for i in range(400)]
    test = [_family("AB"[i % 2], 1000 + i, g) for i in range(100)]
    tr, _ = collect_records(train, 12, roster)
    te, _ = collect_records(test, 12, roster)
    # Oracle losses confirm the engineered winners family-wide; single series
    # can still flip by chance, and accuracy below is scored per series.
    fam_ok = True
    for fam, winner, loser in (("A", "seasonal_naive", "ses"), ("B", "ses", "seasonal_naive")):
        rs = [r for r in te if r.series_id.startswith(fam)]
        wins = np.mean([r.losses[winner] < r.losses[loser] for r in rs])
        means = np.mean([r.losses[winner] for r in rs]), np.mean([r.losses[loser] for r in rs])
        fam_ok &= bool(wins >= 0.9 and means[0] < means[1])
    t_train = table_from_records(tr, roster)
    t_test = table_from_records(te, roster)
    sel = fit(t_train, MetaHyper(n_trees=50, mode="selection"), RngStream(7))
    W = predict_weights(sel, t_test.features)
    acc = float(np.mean(np.argmax(W, 1) == np.argmin(t_test.losses, 1)))
    comb = fit(t_train, MetaHyper(n_trees=50), RngStream(7))
    obj, uni = objective(t_test, comb), uniform_objective(t_test)
    record(7, fam_ok and acc >= 0.9 and obj <= uni,
           f"oracle winners as engineered={fam_ok}, selection accuracy {acc:.2%}, "
           f"combination objective {obj:.2f} vs uniform {uni:.2f}")


@pytest.mark.slow
def test_c08_combination_sanity():
    t0 = time.perf_counter()
    H = 6
    train = generate_dataset(1000, (40, 120), 1, 3, RngStream(8, 1), horizon=H, id_prefix="T")
    test = generate_dataset(2000, (40, 120), 1, 3, RngStream(8, 2), horizon=H, id_prefix="V")
    tr, _ = collect_records(train.series, H)
    te, dropped = collect_records(test.series, H)
    roster = tr[0].bundle.methods
    model = fit(table_from_records(tr, roster), MetaHyper(), RngStream(8, 3))
    t_test = table_from_records(te, roster)
    W = predict_weights(model, t_test.features)
    trained = float(np.mean([
        rmsse(r.validation, W[i] @ r.bundle.points, r.train.values) for i, r in enumerate(te)
    ]))
    equal = float(np.mean([rmsse(r.validation, r.bundle.points.mean(0), r.train.values) for r in te]))
    oracle = oracle_objective(t_test) / len(t_test)
    dt = time.perf_counter() - t0
    record(8, trained <= 1.02 * equal and trained >= oracle and dt < 600,
           f"{len(te)} test series ({len(dropped)} dropped): trained {trained:.4f}, "
           f"equal-weight {equal:.4f}, oracle selection {oracle:.4f}, {dt:.0f}s")


def test_c09_rrelieff_and_clustering():
    first = 0
    pair_ok = True
    for seed in range(20):
        g = np.random.default_rng(900 + seed)
        n = 200
        noise = g.normal(size=(n, 6))
        y = g.normal(size=n)
        a = g.normal(size=n)
        X = np.c_[noise, y, a, -2.0 * a + 3.0]
        names = [f"noise{i}" for i in range(6)] + ["copy", "pair1", "pair2"]
        q = rrelieff((names, X), y, 10, n, RngStream(seed, 9))
        first += max(q, key=q.get) == "copy"
        rep = cluster_select((names, X), q)
        together = any({"pair1", "pair2"} <= set(c) for c in rep.clusters)
        one = sum(c in ("pair1", "pair2") for c in rep.chosen) == 1
        pair_ok &= together and one
    record(9, first >= 19 and pair_ok,
           f"copy ranked first in {first}/20 runs; correlated pair clustered with one survivor={pair_ok}")


def _cli(cwd, *args):
    proc = subprocess.run([sys.executable, "-m", "featurecast.cli", *args], cwd=cwd,
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.mark.slow
def test_c10_end_to_end_determinism(tmp_path):
    digests = []
    for run in ("r1", "r2"):
        d = tmp_path / run
        d.mkdir()
        (d / "cfg.json").write_text(json.dumps({"seed": 17, "count": 60, "horizon": 6, "n_trees": 20,
                                                "trim": True, "feature_source": "both"}))
        _cli(d, "generate", "--config", "cfg.json", "--out", "gen")
        _cli(d, "train", "--config", "cfg.json", "--input", "gen/series.csv", "--out", "train")
        _cli(d, "forecast", "--config", "cfg.json", "--model", "train/model.json",
             "--input", "gen/series.csv", "--holdout", "--out", "fc")
        _cli(d, "evaluate", "--config", "cfg.json", "--forecasts", "fc/forecasts.jsonl",
             "--actuals", "gen/series.csv", "--out", "eval")
        files = sorted(p for p in d.rglob("*") if p.is_file())
        digests.append({str(p.relative_to(d)): p.read_bytes() for p in files})
    same = digests[0] == digests[1]
    record(10, same and len(digests[0]) >= 12,
           f"{len(digests[0])} artifacts compared, byte-identical={same}")
