"""Shared domain types, splitting, random streams and the series CSV format."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class FeaturecastError(Exception):
    """Base class for all package errors."""


class ValidationError(FeaturecastError, ValueError):
    """Input violates a documented precondition."""


class SeriesTooShortError(ValidationError):
    def __init__(self, series_id: str, length: int, minimum: int):
        self.series_id = series_id
        self.length = length
        self.minimum = minimum
        super().__init__(
            f"series {series_id!r} has length {length}, needs at least {minimum}"
        )


class DegenerateSeriesError(ValidationError):
    """Series is constant or too short for a scale statistic."""


class SchemaError(ValidationError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


def min_history(period: int) -> int:
    """Minimum training length so seasonal methods and decomposition are fittable."""
    return 2 * period + 3


@dataclass(frozen=True)
class TimeSeries:
    id: str
    period: int
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size < 1:
            raise ValidationError(f"series {self.id!r} is empty")
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"series {self.id!r} contains non-finite values")
        if int(self.period) != self.period or self.period < 1:
            raise ValidationError(f"series {self.id!r}: period must be a positive integer")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "period", int(self.period))

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(self.id, self.period, values)


@dataclass(frozen=True)
class SplitSeries:
    train: TimeSeries
    validation: np.ndarray

    def __post_init__(self):
        validation = np.array(self.validation, dtype=np.float64).ravel()
        validation.setflags(write=False)
        object.__setattr__(self, "validation", validation)

    @property
    def horizon(self) -> int:
        return self.validation.size


@dataclass(frozen=True)
class Dataset:
    series: tuple
    horizon: int

    def __post_init__(self):
        series = tuple(self.series)
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        seen = set()
        for s in series:
            if s.id in seen:
                raise ValidationError(f"duplicate series id {s.id!r}")
            seen.add(s.id)
            need = self.horizon + min_history(s.period)
            if len(s) < need:
                raise SeriesTooShortError(s.id, len(s), need)
        object.__setattr__(self, "series", series)

    def __len__(self) -> int:
        return len(self.series)

    def __iter__(self):
        return iter(self.series)


@dataclass
class RngStream:
    """Deterministic random stream keyed by ``(seed, stream_id)``.

    Sub-streams are addressed by a path of integers, so work can be handed to
    any worker in any order and still draw the same numbers.
    """

    seed: int
    stream_id: int = 0
    path: tuple = ()
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise ValidationError("seed and stream_id must be unsigned 64-bit integers")
        ss = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.stream_id), *map(int, self.path))
        )
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, *keys: int) -> "RngStream":
        """Independent child stream; does not advance this stream."""
        return RngStream(self.seed, self.stream_id, self.path + tuple(int(k) for k in keys))

    def __getattr__(self, name):
        # Forward draw methods (normal, uniform, integers, ...) to the generator.
        if name == "generator":
            raise AttributeError(name)
        return getattr(self.generator, name)


def split(series: TimeSeries, horizon: int) -> SplitSeries:
    """Hold out the last ``horizon`` observations as a validation window."""
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    need = horizon + min_history(series.period)
    if len(series) < need:
        raise SeriesTooShortError(series.id, len(series), need)
    cut = len(series) - horizon
    return SplitSeries(series.with_values(series.values[:cut]), series.values[cut:])


def scale_stats(series: TimeSeries | Sequence[float]) -> tuple[float, float]:
    """Return ``(mean, mean squared first difference)``."""
    y = np.asarray(getattr(series, "values", series), dtype=np.float64)
    if y.size < 2:
        raise DegenerateSeriesError("need at least 2 observations")
    d = np.diff(y)
    return float(y.mean()), float(np.mean(d * d))


# --- series CSV -----------------------------------------------------------------

CSV_HEADER = ("series_id", "period", "index", "value")


def _format_float(x: float) -> str:
    return repr(float(x))


def write_series_csv(series: Iterable[TimeSeries], path: str | Path | None = None) -> str:
    """Write series in the ``series_id,period,index,value`` schema.

    Returns the text; also writes it to ``path`` when given.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for s in series:
        for i, v in enumerate(s.values):
            w.writerow((s.id, s.period, i, _format_float(v)))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_series_csv(path: str | Path) -> list[TimeSeries]:
    """Parse the series CSV, reporting schema problems with 1-based row numbers."""
    with open(path, newline="") as fh:
        return parse_series_csv(fh)


def parse_series_csv(fh) -> list[TimeSeries]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise SchemaError(f"header must be {','.join(CSV_HEADER)}", row=1)

    out: list[TimeSeries] = []
    done: set[str] = set()
    cur_id, cur_period, cur_vals = None, None, []

    def flush():
        if cur_id is not None:
            out.append(TimeSeries(cur_id, cur_period, cur_vals))
            done.add(cur_id)

    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise SchemaError(f"expected 4 fields, got {len(row)}", row=rowno)
        sid = row[0].strip()
        try:
            period = int(row[1])
            index = int(row[2])
        except ValueError:
            raise SchemaError("period and index must be integers", row=rowno) from None
        text = row[3].strip()
        if text == "" or text.lower() in {"na", "nan", "null"}:
            raise SchemaError(f"missing value for series {sid!r}", row=rowno)
        try:
            value = float(text)
        except ValueError:
            raise SchemaError(f"value {text!r} is not a number", row=rowno) from None
        if not np.isfinite(value):
            raise SchemaError(f"non-finite value for series {sid!r}", row=rowno)
        if period < 1:
            raise SchemaError("period must be >= 1", row=rowno)

        if sid != cur_id:
            if sid in done:
                raise SchemaError(f"rows for series {sid!r} are not contiguous", row=rowno)
            flush()
            cur_id, cur_period, cur_vals = sid, period, []
        elif period != cur_period:
            raise SchemaError(f"period changes within series {sid!r}", row=rowno)
        if index != len(cur_vals):
            raise SchemaError(
                f"series {sid!r}: expected index {len(cur_vals)}, got {index}", row=rowno
            )
        cur_vals.append(value)
    flush()
    return out


def parallel_map(fn, items: Sequence, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally across processes, in input order."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))
