"""Feature-based forecast selection and combination.

Per method, a bagged regression-tree ensemble predicts the forecast loss from
series features.  Predicted losses become weights through a tempered softmax
(combination mode) or an argmin (selection mode).  The temperature is chosen
to minimize the summed weighted loss over the training table.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Dataset, FeaturecastError, RngStream, TimeSeries, ValidationError, parallel_map, split
from .features import CATALOG, FeatureVector, diversity, diversity_feature_names, extract
from .metrics import check_weights, point_loss
from .pool import DEFAULT_ROSTER, ForecastBundle, forecast_all
from .trees import BaggedTrees, RegressionTree, fit_bagged

MODEL_VERSION = 1
FEATURE_SOURCES = ("historical", "diversity", "both")
MODES = ("combination", "selection")
TAU_RANGE = (0.01, 100.0)


class SchemaMismatchError(ValidationError):
    pass


# --- training data -------------------------------------------------------------


@dataclass
class SeriesRecord:
    series_id: str
    train: TimeSeries
    validation: np.ndarray
    bundle: ForecastBundle
    history_features: FeatureVector
    losses: dict


def feature_names(source: str, roster: Sequence[str]) -> list[str]:
    if source not in FEATURE_SOURCES:
        raise ValidationError(f"feature source must be one of {FEATURE_SOURCES}")
    names = []
    if source in ("historical", "both"):
        names += list(CATALOG)
    if source in ("diversity", "both") and len(roster) >= 2:
        names += diversity_feature_names(roster)
    return names


def series_features(hist: FeatureVector | None, bundle: ForecastBundle, source: str) -> FeatureVector:
    out = FeatureVector()
    if source in ("historical", "both"):
        out.update(hist)
    if source in ("diversity", "both") and len(bundle.methods) >= 2:
        out.update(diversity(bundle).flatten())
    return out


def evaluate_series(series: TimeSeries, horizon: int, roster, alpha: float, loss: str) -> SeriesRecord:
    """Split, forecast the validation window, score each method, extract features."""
    sp = split(series, horizon)
    bundle = forecast_all(sp.train, horizon, alpha, roster)
    losses = {
        m: point_loss(loss, sp.validation, bundle.points[i], sp.train.values, sp.train.period)
        for i, m in enumerate(bundle.methods)
    }
    return SeriesRecord(series.id, sp.train, sp.validation, bundle, extract(sp.train), losses)


def _evaluate_safe(args):
    series, horizon, roster, alpha, loss = args
    try:
        return evaluate_series(series, horizon, roster, alpha, loss)
    except (FeaturecastError, ValueError, ArithmeticError) as exc:
        return {"series_id": series.id, "error": type(exc).__name__, "message": str(exc)}


def collect_records(
    series: Sequence[TimeSeries],
    horizon: int,
    roster: Sequence[str] = DEFAULT_ROSTER,
    alpha: float = 0.05,
    loss: str = "rmsse",
    workers: int = 1,
) -> tuple[list[SeriesRecord], list[dict]]:
    """Evaluate every series; failures are returned instead of raised.

    Output order follows input order whatever ``workers`` is.
    """
    jobs = [(s, horizon, tuple(roster), alpha, loss) for s in series]
    results = parallel_map(_evaluate_safe, jobs, workers)
    records = [r for r in results if isinstance(r, SeriesRecord)]
    failures = [r for r in results if not isinstance(r, SeriesRecord)]
    return records, failures


@dataclass
class TrainingTable:
    series_ids: list
    features: np.ndarray  # N x p
    losses: np.ndarray  # N x M
    schema: tuple
    roster: tuple
    feature_source: str = "historical"
    dropped: list = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float).reshape(len(self.series_ids), -1)
        self.losses = np.asarray(self.losses, dtype=float).reshape(len(self.series_ids), -1)
        self.schema = tuple(self.schema)
        self.roster = tuple(self.roster)
        if self.features.shape[1] != len(self.schema) or self.losses.shape[1] != len(self.roster):
            raise ValidationError("training table dimensions do not match schema/roster")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.losses))):
            raise ValidationError("training table contains non-finite entries")
        if np.any(self.losses < 0):
            raise ValidationError("losses must be nonnegative")

    def __len__(self) -> int:
        return len(self.series_ids)


def table_from_records(records: Sequence[SeriesRecord], roster: Sequence[str], feature_source: str = "historical",
                       dropped: Sequence[dict] = ()) -> TrainingTable:
    roster = tuple(roster)
    schema = feature_names(feature_source, roster)
    X, L, ids = [], [], []
    for r in records:
        b = r.bundle.subset(roster)
        fv = series_features(r.history_features, b, feature_source)
        X.append([fv[n] for n in schema])
        L.append([r.losses[m] for m in roster])
        ids.append(r.series_id)
    return TrainingTable(ids, np.array(X).reshape(len(ids), len(schema)), np.array(L).reshape(len(ids), len(roster)),
                         schema, roster, feature_source, list(dropped))


def build_training_table(
    dataset: Dataset,
    roster: Sequence[str] = DEFAULT_ROSTER,
    loss: str = "rmsse",
    *,
    feature_source: str = "historical",
    alpha: float = 0.05,
    workers: int = 1,
) -> TrainingTable:
    """Per series: hold out H points, forecast them with the pool, score, featurize.

    Series that fail (e.g. constant history under RMSSE) are listed in
    ``table.dropped``.
    """
    records, failures = collect_records(dataset.series, dataset.horizon, roster, alpha, loss, workers)
    return table_from_records(records, roster, feature_source, failures)


# --- model ---------------------------------------------------------------------


@dataclass(frozen=True)
class MetaHyper:
    n_trees: int = 100
    max_depth: int = 6
    min_leaf: int = 5
    feature_subsample: int | None = None  # None -> ceil(sqrt(p))
    row_subsample: float = 1.0
    log_transform: bool = True
    mode: str = "combination"

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 0 or self.min_leaf < 1:
            raise ValidationError("invalid tree hyperparameters")
        if not 0 < self.row_subsample <= 1.0:
            raise ValidationError("row_subsample must lie in (0, 1]")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")


@dataclass
class MetaModel:
    schema: tuple
    roster: tuple
    predictors: list  # one BaggedTrees per roster method
    tau: float
    mode: str = "combination"
    log_transform: bool = True
    feature_source: str = "historical"
    loss: str = "rmsse"
    version: int = MODEL_VERSION

    def predict_errors(self, X: np.ndarray) -> np.ndarray:
        """Back-transformed, zero-clamped predicted losses, shape N x M."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        raw = np.column_stack([p.predict(X) for p in self.predictors])
        return _back_transform(raw, self.log_transform)

    def features_matrix(self, rows: Sequence[Mapping[str, float]]) -> np.ndarray:
        out = []
        for r in rows:
            missing = [n for n in self.schema if n not in r]
            if missing:
                raise SchemaMismatchError(f"missing features: {missing}")
            out.append([float(r[n]) for n in self.schema])
        return np.array(out).reshape(len(out), len(self.schema))

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "mode": self.mode,
            "tau": self.tau,
            "loss": self.loss,
            "log_transform": self.log_transform,
            "feature_source": self.feature_source,
            "schema": list(self.schema),
            "roster": list(self.roster),
            "predictors": [[t.to_dict() for t in p.trees] for p in self.predictors],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetaModel":
        if "version" not in d:
            raise ValidationError("model document lacks a version field")
        if d["version"] != MODEL_VERSION:
            raise ValidationError(f"unsupported model version {d['version']!r}")
        preds = [BaggedTrees([RegressionTree.from_dict(t) for t in trees]) for trees in d["predictors"]]
        if len(preds) != len(d["roster"]):
            raise ValidationError("one predictor per roster method is required")
        p = len(d["schema"])
        for bt in preds:
            for t in bt.trees:
                if np.any(t.feature >= p):
                    raise ValidationError("tree references a feature outside the schema")
        return cls(tuple(d["schema"]), tuple(d["roster"]), preds, float(d["tau"]), d["mode"],
                   bool(d["log_transform"]), d.get("feature_source", "historical"), d.get("loss", "rmsse"),
                   int(d["version"]))

    @classmethod
    def from_json(cls, text: str) -> "MetaModel":
        return cls.from_dict(json.loads(text))


def _transform(L: np.ndarray, log: bool) -> np.ndarray:
    return np.log1p(L) if log else L


def _back_transform(pred: np.ndarray, log: bool) -> np.ndarray:
    e = np.expm1(pred) if log else pred
    return np.maximum(e, 0.0)


def weights_from_errors(errors, tau: float, mode: str = "combination") -> np.ndarray:
    """Row-wise weights from predicted errors.

    Combination: ``w_i = exp(-e_i/tau) / sum_j exp(-e_j/tau)``.
    Selection: one-hot at the smallest error, first index on ties.
    """
    E = np.asarray(errors, dtype=float)
    single = E.ndim == 1
    E = np.atleast_2d(E)
    if mode == "selection":
        W = np.zeros_like(E)
        W[np.arange(E.shape[0]), np.argmin(E, axis=1)] = 1.0
    else:
        if not tau > 0:
            raise ValidationError("tau must be positive")
        Z = -(E - E.min(axis=1, keepdims=True)) / tau
        W = np.exp(Z)
        W /= W.sum(axis=1, keepdims=True)
    return W[0] if single else W


def _weighted_loss(W: np.ndarray, L: np.ndarray) -> float:
    return float(np.sum(W * L))


def golden_section(f, lo: float, hi: float, tol: float = 1e-6, max_iter: int = 200) -> float:
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


def fit_temperature(errors: np.ndarray, losses: np.ndarray, lo: float = TAU_RANGE[0], hi: float = TAU_RANGE[1]) -> float:
    """Temperature minimizing the summed softmax-weighted loss.

    A coarse log-spaced scan brackets the minimum, then golden-section search
    on log(tau) refines it inside the bracket.
    """

    def obj(log_tau):
        return _weighted_loss(weights_from_errors(errors, math.exp(log_tau)), losses)

    grid = np.linspace(math.log(lo), math.log(hi), 13)
    vals = [obj(g) for g in grid]
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    best = golden_section(obj, a, b, tol=1e-4)
    if obj(best) > vals[k]:
        best = grid[k]
    return float(math.exp(best))


def fit(table: TrainingTable, hyper: MetaHyper = MetaHyper(), rng: RngStream | None = None, *,
        loss: str = "rmsse", min_rows: int = 20) -> MetaModel:
    """Fit one bagged ensemble per method, then the softmax temperature.

    Trees for method ``i`` draw from ``rng.spawn(i)``.  The temperature is fit
    on out-of-bag predictions so it reflects out-of-sample error accuracy.
    """
    if rng is None:
        raise ValidationError("an RngStream is required")
    if len(table) < min_rows:
        raise ValidationError(f"need at least {min_rows} training rows, got {len(table)}")
    X, L = table.features, table.losses
    targets = _transform(L, hyper.log_transform)
    preds, oob = [], []
    for i in range(len(table.roster)):
        bt = fit_bagged(
            X, targets[:, i],
            n_trees=hyper.n_trees, max_depth=hyper.max_depth, min_leaf=hyper.min_leaf,
            max_features=hyper.feature_subsample, row_subsample=hyper.row_subsample,
            rng=rng.spawn(i),
        )
        preds.append(bt)
        oob.append(bt.oob_prediction)
    E_oob = _back_transform(np.column_stack(oob), hyper.log_transform)
    tau = fit_temperature(E_oob, L)
    return MetaModel(table.schema, table.roster, preds, tau, hyper.mode, hyper.log_transform,
                     table.feature_source, loss)


def predict_weights(model: MetaModel, features) -> np.ndarray:
    """Weights for one feature vector (mapping) or a batch (list of mappings / array)."""
    if isinstance(features, Mapping):
        X = model.features_matrix([features])
        return weights_from_errors(model.predict_errors(X), model.tau, model.mode)[0]
    if isinstance(features, np.ndarray):
        X = np.atleast_2d(features)
        if X.shape[1] != len(model.schema):
            raise SchemaMismatchError(f"expected {len(model.schema)} features, got {X.shape[1]}")
    else:
        X = model.features_matrix(features)
    return weights_from_errors(model.predict_errors(X), model.tau, model.mode)


def combine(bundle: ForecastBundle, weights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted average of point forecasts and of the interval bounds."""
    w = check_weights(weights, len(bundle.methods))
    return w @ bundle.points, w @ bundle.lower, w @ bundle.upper


def objective(table: TrainingTable, model: MetaModel | None = None, *, weights: np.ndarray | None = None) -> float:
    """Sum over series and methods of weight times loss."""
    if weights is None:
        if model is None:
            raise ValidationError("need a model or explicit weights")
        if tuple(model.schema) != table.schema or tuple(model.roster) != table.roster:
            raise SchemaMismatchError("model and table disagree on schema or roster")
        weights = predict_weights(model, table.features)
    W = np.asarray(weights, dtype=float)
    if W.shape != table.losses.shape:
        raise ValidationError("weights shape does not match the loss table")
    return _weighted_loss(W, table.losses)


def uniform_objective(table: TrainingTable) -> float:
    return float(np.sum(table.losses.mean(axis=1)))


def oracle_objective(table: TrainingTable) -> float:
    return float(np.sum(table.losses.min(axis=1)))
