"""Command-line entry point: generate, features, train, forecast, evaluate.

Every command takes ``--config`` (a JSON document), and every config key is
also a flag that overrides it.  Each output directory receives the effective
``config.json``.  Exit codes: 0 success, 1 validation error, 2 runtime failure;
errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import typing
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, load_target
from .core import (
    FeaturecastError,
    RngStream,
    SchemaError,
    SeriesTooShortError,
    TimeSeries,
    ValidationError,
    min_history,
    parallel_map,
    read_series_csv,
    write_series_csv,
)
from .features import CATALOG, extract
from .generator import GaConfig, ga_search, generate_dataset, simulate
from .metalearn import (
    MetaHyper,
    MetaModel,
    collect_records,
    combine,
    fit,
    objective,
    oracle_objective,
    predict_weights,
    series_features,
    table_from_records,
    uniform_objective,
)
from .metrics import EvalReport, mse_decomposition, msis, point_loss
from .pool import ForecastBundle, forecast_all
from .selection import select_features
from .trimming import TrimConfig, TrimResult, rad

log = logging.getLogger("featurecast")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
COMMANDS = ("generate", "features", "train", "forecast", "evaluate")


class RuntimeFailure(FeaturecastError, RuntimeError):
    def __init__(self, message: str, **details):
        self.details = details
        super().__init__(message)


# --- argument handling ---------------------------------------------------------


def _flag_type(tp):
    """argparse converter for a config field annotation."""
    if isinstance(tp, str):
        tp = eval(tp, vars(typing) | {"list": list})  # annotations are strings under PEP 563
    args = typing.get_args(tp)
    if args and type(None) in args:
        inner = next(a for a in args if a is not type(None))
        return lambda s: None if s.lower() in ("none", "null", "") else inner(s)
    if tp is list:
        return lambda s: [x.strip() for x in s.split(",") if x.strip()]
    return tp


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="featurecast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        for f in fields(PipelineConfig):
            flag = "--" + f.name.replace("_", "-")
            if f.type in (bool, "bool"):
                p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
            else:
                p.add_argument(flag, dest=f.name, type=_flag_type(f.type), default=None)
    return parser


def resolve_config(ns: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.load(ns.config) if ns.config else PipelineConfig()
    for f in fields(PipelineConfig):
        val = getattr(ns, f.name, None)
        if val is not None:
            setattr(cfg, f.name, val)
    return cfg.validate()


def _outdir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    return out


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _require(value, name: str):
    if not value:
        raise ConfigError(f"--{name.replace('_', '-')} is required for this command")
    return value


def _usable(series: list[TimeSeries], need_extra: int) -> tuple[list[TimeSeries], list[dict]]:
    ok, bad = [], []
    for s in series:
        need = need_extra + min_history(s.period)
        if len(s) < need:
            bad.append({"series_id": s.id, "error": "SeriesTooShortError",
                        "message": f"length {len(s)} < required {need}"})
        else:
            ok.append(s)
    return ok, bad


# --- commands ------------------------------------------------------------------


def cmd_generate(cfg: PipelineConfig) -> int:
    out = _outdir(cfg)
    rng = RngStream(cfg.seed, 0)
    if cfg.ga_target:
        target = load_target(cfg.ga_target)
        ga = GaConfig(
            target, population_size=cfg.ga_population, generations=cfg.ga_generations,
            samples_per_candidate=cfg.ga_samples, tolerance=cfg.ga_tolerance,
            K=cfg.components, max_order=cfg.max_order,
        )
        res = ga_search(ga, cfg.period, cfg.ga_length, rng.spawn(0))
        sim_rng = rng.spawn(1)
        width = len(str(cfg.count - 1))
        series = [
            simulate(res.spec, cfg.ga_length, None, sim_rng.spawn(i), period=cfg.period,
                     series_id=f"G{i:0{width}d}")
            for i in range(cfg.count)
        ]
        distances = []
        names = [n for n in CATALOG if n in target]
        tvec = np.array([target[n] for n in names])
        for s in series:
            fv = extract(s)
            distances.append(float(np.linalg.norm([fv[n] for n in names] - tvec)))
        write_series_csv(series, out / "series.csv")
        (out / "ga.json").write_text(_dump({
            "achieved_distance": res.distance,
            "converged": res.converged,
            "initial_best_distance": res.initial_best,
            "history": res.history,
            "spec": res.spec.to_dict(),
            "series_distances": dict(zip((s.id for s in series), distances)),
        }))
        print(f"generated {len(series)} GA-matched series (seed {cfg.seed}); "
              f"achieved distance {res.distance:.6g}")
        if not res.converged:
            raise RuntimeFailure("GA did not reach the tolerance", error="NotConverged",
                                 achieved_distance=res.distance, tolerance=cfg.ga_tolerance)
        return EXIT_OK

    ds = generate_dataset(cfg.count, (cfg.length_min, cfg.length_max), cfg.period, cfg.components,
                          rng, max_order=cfg.max_order, horizon=cfg.horizon)
    write_series_csv(ds.series, out / "series.csv")
    print(f"generated {len(ds)} series (seed {cfg.seed})")
    return EXIT_OK


def _extract_safe(s: TimeSeries):
    try:
        return extract(s)
    except (FeaturecastError, ValueError) as exc:
        return {"series_id": s.id, "error": type(exc).__name__, "message": str(exc)}


def cmd_features(cfg: PipelineConfig) -> int:
    series = read_series_csv(_require(cfg.input, "input"))
    out = _outdir(cfg)
    results = parallel_map(_extract_safe, series, cfg.workers)
    failures = [r for r in results if "error" in r]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("series_id",) + CATALOG)
    for s, fv in zip(series, results):
        if "error" not in fv:
            w.writerow([s.id] + [repr(fv[n]) for n in CATALOG])
    (out / "features.csv").write_text(buf.getvalue())

    if cfg.select:
        usable, short = _usable(series, cfg.horizon)
        records, failed = collect_records(usable, cfg.horizon, [cfg.selection_method], cfg.alpha, "rmsse", cfg.workers)
        failures += short + failed
        target = [float(np.log(max(r.losses[cfg.selection_method], 1e-12))) for r in records]
        table = [r.history_features for r in records]
        if len(table) < 3:
            raise ValidationError("feature selection needs at least 3 usable series")
        report = select_features(table, target, RngStream(cfg.seed, 0), k=cfg.rrelieff_k)
        (out / "selection.json").write_text(_dump(report.to_dict()))
    (out / "failures.json").write_text(_dump(failures))
    print(f"extracted features for {len(series) - len([f for f in results if 'error' in f])} series")
    return EXIT_OK


def cmd_train(cfg: PipelineConfig) -> int:
    series = read_series_csv(_require(cfg.input, "input"))
    out = _outdir(cfg)
    usable, short = _usable(series, cfg.horizon)
    records, failed = collect_records(usable, cfg.horizon, cfg.roster, cfg.alpha, cfg.loss, cfg.workers)
    failures = short + failed
    (out / "failures.json").write_text(_dump(failures))
    if len(records) < cfg.min_rows:
        raise ValidationError(f"only {len(records)} usable series; need at least {cfg.min_rows}")

    if cfg.trim:
        trim = rad([r.bundle for r in records], [r.validation for r in records],
                   TrimConfig(cfg.kappa, cfg.min_pool, cfg.significance_epsilon))
    else:
        trim = TrimResult(list(cfg.roster), [], [])
    (out / "trim.json").write_text(trim.to_json())

    table = table_from_records(records, trim.kept, cfg.feature_source, failures)
    hyper = MetaHyper(cfg.n_trees, cfg.max_depth, cfg.min_leaf, cfg.feature_subsample,
                      cfg.row_subsample, cfg.log_transform, cfg.mode)
    model = fit(table, hyper, RngStream(cfg.seed, 1), loss=cfg.loss, min_rows=cfg.min_rows)
    (out / "model.json").write_text(model.to_json())

    report = {
        "series_used": len(table),
        "series_dropped": len(failures),
        "roster": list(cfg.roster),
        "kept_roster": list(trim.kept),
        "tau": model.tau,
        "mode": model.mode,
        "objective": {
            "trained": objective(table, model),
            "uniform": uniform_objective(table),
            "oracle_selection": oracle_objective(table),
        },
        "mean_loss_per_method": {m: float(v) for m, v in zip(table.roster, table.losses.mean(axis=0))},
    }
    (out / "report.json").write_text(_dump(report))
    print(f"trained on {len(table)} series ({len(failures)} dropped); tau={model.tau:.6g}")
    return EXIT_OK


def _forecast_one(args):
    s, model_doc, horizon, alpha = args
    model = MetaModel.from_dict(model_doc) if isinstance(model_doc, dict) else model_doc
    try:
        if len(s) < min_history(s.period):
            raise SeriesTooShortError(s.id, len(s), min_history(s.period))
        bundle = forecast_all(s, horizon, alpha, model.roster)
        fv = series_features(extract(s) if model.feature_source != "diversity" else None,
                             bundle, model.feature_source)
        w = predict_weights(model, fv)
        pts, lo, hi = combine(bundle, w)
    except (FeaturecastError, ValueError, ArithmeticError) as exc:
        return [{"series_id": s.id, "error": type(exc).__name__, "message": str(exc)}]
    rows = bundle.to_records(s.id)
    rows.append({
        "series_id": s.id,
        "method": "combined",
        "points": pts.tolist(),
        "lower": lo.tolist(),
        "upper": hi.tolist(),
        "weights": {m: float(x) for m, x in zip(model.roster, w)},
        "mode": model.mode,
    })
    return rows


def cmd_forecast(cfg: PipelineConfig) -> int:
    model_text = Path(_require(cfg.model, "model")).read_text()
    try:
        model = MetaModel.from_json(model_text)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"model file is malformed: {exc}") from None
    series = read_series_csv(_require(cfg.input, "input"))
    out = _outdir(cfg)
    if cfg.holdout:
        series = [s.with_values(s.values[: len(s) - cfg.horizon]) if len(s) > cfg.horizon else s
                  for s in series]
    doc = model.to_dict() if cfg.workers > 1 else model
    chunks = parallel_map(_forecast_one, [(s, doc, cfg.horizon, cfg.alpha) for s in series], cfg.workers)
    lines, failures = [], []
    for rows in chunks:
        for r in rows:
            lines.append(json.dumps(r, sort_keys=True))
            if "error" in r:
                failures.append(r)
    (out / "forecasts.jsonl").write_text("".join(l + "\n" for l in lines))
    (out / "failures.json").write_text(_dump(failures))
    print(f"forecast {len(series) - len(failures)} series ({len(failures)} failed)")
    return EXIT_OK


def _read_jsonl(path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}", row=lineno) from None
    return rows


def cmd_evaluate(cfg: PipelineConfig) -> int:
    rows = _read_jsonl(_require(cfg.forecasts, "forecasts"))
    actuals = {s.id: s for s in read_series_csv(_require(cfg.actuals, "actuals"))}
    by_series: dict[str, list[dict]] = {}
    errored = set()
    for r in rows:
        if "error" in r:
            errored.add(r["series_id"])
            continue
        by_series.setdefault(r["series_id"], []).append(r)
    unmatched = sorted(set(by_series) - set(actuals)) + sorted(set(actuals) - set(by_series) - errored)
    if unmatched:
        raise ValidationError(f"forecasts and actuals do not join; unmatched ids: {unmatched}")
    out = _outdir(cfg)

    report = EvalReport()
    for sid, recs in by_series.items():
        truth_series = actuals[sid]
        H = len(recs[0]["points"])
        if any(len(r["points"]) != H for r in recs) or len(truth_series) <= H:
            report.failures.append({"series_id": sid, "error": "HorizonMismatch"})
            continue
        hist = truth_series.values[: len(truth_series) - H]
        truth = truth_series.values[len(truth_series) - H:]
        m = truth_series.period

        methods = [r for r in recs if r["method"] != "combined"]
        combined = [r for r in recs if r["method"] == "combined"]
        scored = list(recs)
        if len(methods) >= 2:
            eq = ForecastBundle.from_records(methods, cfg.alpha)
            scored.append({
                "method": "equal_weight",
                "points": eq.points.mean(axis=0).tolist(),
                "lower": eq.lower.mean(axis=0).tolist(),
                "upper": eq.upper.mean(axis=0).tolist(),
            })
        subs = [r["method"] for r in methods if r.get("substituted")]
        if subs:
            report.substitutions[sid] = subs
        for r in scored:
            for loss in ("rmsse", "smape", "mase"):
                try:
                    report.add(sid, r["method"], loss, point_loss(loss, truth, r["points"], hist, m))
                except ValidationError as exc:
                    report.failures.append({"series_id": sid, "method": r["method"], "loss": loss,
                                            "error": type(exc).__name__, "message": str(exc)})
            try:
                report.add(sid, r["method"], "msis", msis(truth, r["lower"], r["upper"], hist, cfg.alpha, m))
            except ValidationError as exc:
                report.failures.append({"series_id": sid, "method": r["method"], "loss": "msis",
                                        "error": type(exc).__name__, "message": str(exc)})
        if combined and "weights" in combined[0] and methods:
            weights = combined[0]["weights"]
            names = [r["method"] for r in methods if r["method"] in weights]
            F = np.array([next(r["points"] for r in methods if r["method"] == n) for n in names])
            w = np.array([weights[n] for n in names])
            if names and abs(w.sum() - 1) <= 1e-9:
                comb, weighted, div = mse_decomposition(F, w, truth)
                report.decomposition_residuals.append(abs(comb - (weighted - div)))

    (out / "eval.csv").write_text(report.to_csv())
    (out / "summary.json").write_text(report.summary_json())
    print(f"evaluated {len(by_series)} series")
    return EXIT_OK


HANDLERS = {
    "generate": cmd_generate,
    "features": cmd_features,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
}


def _fail(code: int, exc: BaseException, **extra) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    payload.update(getattr(exc, "details", {}))
    if getattr(exc, "row", None) is not None:
        payload["row"] = exc.row
    payload.update(extra)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING)
    try:
        cfg = resolve_config(ns)
        return HANDLERS[ns.command](cfg)
    except ValidationError as exc:
        return _fail(EXIT_VALIDATION, exc)
    except (TypeError, json.JSONDecodeError) as exc:
        return _fail(EXIT_VALIDATION, exc)
    except FileNotFoundError as exc:
        return _fail(EXIT_VALIDATION, exc)
    except (FeaturecastError, OSError, RuntimeError, ArithmeticError) as exc:
        return _fail(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
