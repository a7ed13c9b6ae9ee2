"""Pipeline configuration: one JSON document, overridable flag by flag."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .core import ValidationError
from .features import CATALOG
from .metalearn import FEATURE_SOURCES, MODES
from .metrics import POINT_LOSSES
from .pool import DEFAULT_ROSTER, METHODS


class ConfigError(ValidationError):
    pass


@dataclass
class PipelineConfig:
    # shared
    horizon: int = 6
    roster: list = field(default_factory=lambda: list(DEFAULT_ROSTER))
    alpha: float = 0.05
    loss: str = "rmsse"
    seed: int = 0
    workers: int = 1
    out: str = "out"

    # generate
    count: int = 100
    length_min: int = 60
    length_max: int = 120
    period: int = 1
    components: int = 3
    max_order: int = 3
    ga_target: str | None = None
    ga_population: int = 20
    ga_generations: int = 25
    ga_samples: int = 4
    ga_tolerance: float = 0.1
    ga_length: int = 120

    # features
    select: bool = False
    selection_method: str = "naive"
    rrelieff_k: int = 10

    # train
    input: str | None = None
    feature_source: str = "historical"
    trim: bool = False
    kappa: float = 0.5
    min_pool: int = 2
    significance_epsilon: float = 0.01
    n_trees: int = 100
    max_depth: int = 6
    min_leaf: int = 5
    feature_subsample: int | None = None
    row_subsample: float = 1.0
    log_transform: bool = True
    mode: str = "combination"
    min_rows: int = 20

    # forecast / evaluate
    model: str | None = None
    holdout: bool = False
    forecasts: str | None = None
    actuals: str | None = None

    def validate(self) -> "PipelineConfig":
        problems = []
        if self.horizon < 1:
            problems.append("horizon must be >= 1")
        if not self.roster:
            problems.append("roster is empty")
        bad = [m for m in self.roster if m not in METHODS]
        if bad:
            problems.append(f"unknown methods {bad}")
        if len(set(self.roster)) != len(self.roster):
            problems.append("roster has duplicates")
        if not 0 < self.alpha < 1:
            problems.append("alpha must lie in (0, 1)")
        if self.loss not in POINT_LOSSES:
            problems.append(f"loss must be one of {sorted(POINT_LOSSES)}")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if self.count < 1:
            problems.append("count must be >= 1")
        if self.period < 1:
            problems.append("period must be >= 1")
        if self.length_min > self.length_max:
            problems.append("length_min exceeds length_max")
        if self.components < 1 or self.max_order < 1:
            problems.append("components and max_order must be >= 1")
        if self.feature_source not in FEATURE_SOURCES:
            problems.append(f"feature_source must be one of {FEATURE_SOURCES}")
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}")
        if self.selection_method not in METHODS:
            problems.append(f"selection_method {self.selection_method!r} is not a pool method")
        if not 0 <= self.kappa <= 1:
            problems.append("kappa must lie in [0, 1]")
        if self.min_pool < 2:
            problems.append("min_pool must be >= 2")
        if self.significance_epsilon < 0:
            problems.append("significance_epsilon must be nonnegative")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        cfg = cls(**d)
        cfg.roster = list(cfg.roster)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def load_target(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict) or not data:
        raise ConfigError("GA target must be a non-empty JSON object")
    bad = [k for k in data if k not in CATALOG]
    if bad:
        raise ConfigError(f"unknown target features {bad}")
    return {k: float(v) for k, v in data.items()}
