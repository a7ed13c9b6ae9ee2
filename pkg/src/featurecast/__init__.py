"""Feature-based forecast combination with pool trimming and meta-learned weights."""

from .core import (
    Dataset,
    FeaturecastError,
    RngStream,
    SchemaError,
    SeriesTooShortError,
    SplitSeries,
    TimeSeries,
    ValidationError,
    read_series_csv,
    split,
    write_series_csv,
)
from .features import CATALOG, diversity, extract
from .generator import GaConfig, MarSpec, ga_search, generate_dataset, simulate
from .metalearn import MetaHyper, MetaModel, fit, predict_weights, weights_from_errors
from .pool import DEFAULT_ROSTER, ForecastBundle, forecast_all
from .trimming import TrimConfig, rad

__version__ = "0.1.0"
