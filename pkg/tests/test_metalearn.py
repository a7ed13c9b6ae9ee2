import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featurecast.core import RngStream, TimeSeries, ValidationError
from featurecast.features import CATALOG
from featurecast.generator import generate_dataset
from featurecast.metalearn import (
    MetaHyper,
    MetaModel,
    SchemaMismatchError,
    TrainingTable,
    build_training_table,
    collect_records,
    combine,
    feature_names,
    fit,
    fit_temperature,
    golden_section,
    objective,
    oracle_objective,
    predict_weights,
    uniform_objective,
    weights_from_errors,
)
from featurecast.pool import forecast_all


def test_softmax_hand_example():
    w = weights_from_errors([0.0, 1.0], 1.0)
    e = math.exp(-1)
    np.testing.assert_allclose(w, [1 / (1 + e), e / (1 + e)], rtol=1e-15)
    assert w[0] == pytest.approx(0.731, abs=5e-4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=2, max_size=8), st.floats(-100, 100), st.floats(0.01, 100))
def test_softmax_shift_invariant_and_on_simplex(errors, shift, tau):
    w = weights_from_errors(errors, tau)
    w2 = weights_from_errors(np.asarray(errors) + shift, tau)
    np.testing.assert_allclose(w, w2, atol=1e-12)
    assert abs(w.sum() - 1) <= 1e-12 and np.all(w >= 0)


def test_selection_mode_one_hot_first_tie():
    np.testing.assert_array_equal(weights_from_errors([2.0, 1.0, 1.0], 1.0, "selection"), [0, 1, 0])


def test_golden_section_parabola():
    assert golden_section(lambda x: (x - 1.3) ** 2, -5, 5, tol=1e-9) == pytest.approx(1.3, abs=1e-6)


def test_temperature_limits():
    # Perfect error predictions reward the sharpest weights; uninformative ones the flattest.
    L = np.array([[0.0, 1.0], [1.0, 0.0]] * 10)
    assert fit_temperature(L, L) == pytest.approx(0.01, rel=1e-3)
    assert fit_temperature(1 - L, L) == pytest.approx(100.0, rel=1e-3)


def _const_table(n=40, seed=0):
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, 3))
    L = np.c_[np.zeros(n), np.ones(n), np.ones(n)]
    return TrainingTable([f"s{i}" for i in range(n)], X, L, ("a", "b", "c"), ("A", "B", "C"))


def test_zero_loss_method_gets_most_weight():
    table = _const_table()
    model = fit(table, MetaHyper(n_trees=10), RngStream(0))
    W = predict_weights(model, np.random.default_rng(9).normal(size=(25, 3)))
    assert np.all(W[:, 0] > 0.9)
    # Oracle: direct objective sweep over tau for errors (0, 1, 1).
    sweep = {tau: objective(table, weights=np.tile(weights_from_errors([0, 1, 1], tau), (40, 1)))
             for tau in np.geomspace(0.01, 100, 41)}
    best_tau = min(sweep, key=sweep.get)
    assert weights_from_errors([0, 1, 1], best_tau)[0] > 0.9
    assert objective(table, model) <= uniform_objective(table)


def test_fit_is_deterministic_and_serializes():
    table = _const_table(seed=1)
    table.losses[:, 1] = np.abs(table.features[:, 0])
    m1 = fit(table, MetaHyper(n_trees=8), RngStream(5))
    m2 = fit(table, MetaHyper(n_trees=8), RngStream(5))
    assert m1.to_json() == m2.to_json()
    back = MetaModel.from_json(m1.to_json())
    np.testing.assert_array_equal(predict_weights(back, table.features), predict_weights(m1, table.features))
    assert back.to_json() == m1.to_json()


def test_model_versioning_and_schema_errors():
    model = fit(_const_table(), MetaHyper(n_trees=3), RngStream(0))
    doc = json.loads(model.to_json())
    del doc["version"]
    with pytest.raises(ValidationError):
        MetaModel.from_dict(doc)
    with pytest.raises(SchemaMismatchError, match="'c'"):
        predict_weights(model, {"a": 1.0, "b": 2.0})
    with pytest.raises(SchemaMismatchError):
        predict_weights(model, np.zeros((2, 5)))


def test_fit_needs_min_rows():
    with pytest.raises(ValidationError):
        fit(_const_table(n=5), MetaHyper(n_trees=2), RngStream(0))


def test_objective_bounds():
    g = np.random.default_rng(2)
    L = g.uniform(size=(30, 4))
    table = TrainingTable(list(range(30)), g.normal(size=(30, 2)), L, ("x", "y"), tuple("abcd"))
    W = g.dirichlet(np.ones(4), size=30)
    assert oracle_objective(table) <= objective(table, weights=W)
    assert oracle_objective(table) <= uniform_objective(table)


def test_training_table_from_generated_data():
    ds = generate_dataset(25, (40, 60), 1, 2, RngStream(3), horizon=4)
    table = build_training_table(ds, ("naive", "ses", "drift"), feature_source="both")
    assert table.schema == tuple(feature_names("both", ("naive", "ses", "drift")))
    assert len(table) + len(table.dropped) == 25
    assert table.losses.shape == (len(table), 3)


def test_collect_records_contains_failures():
    good = TimeSeries("g", 1, np.random.default_rng(0).normal(size=40).cumsum())
    flat = TimeSeries("f", 1, np.ones(40))
    records, failures = collect_records([good, flat], 4, ("naive", "ses"))
    assert [r.series_id for r in records] == ["g"]
    assert failures[0]["series_id"] == "f"


def test_combine_weights_average():
    s = TimeSeries("x", 1, np.arange(30.0))
    b = forecast_all(s, 3, roster=("naive", "drift"))
    pts, lo, hi = combine(b, [0.5, 0.5])
    np.testing.assert_allclose(pts, b.points.mean(0))
    with pytest.raises(ValidationError):
        combine(b, [0.5, 0.6])
