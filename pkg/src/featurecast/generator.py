"""Synthetic series from mixture autoregressive (MAR) models.

Parameters are drawn from wide distributions rather than fixed, so a batch of
specs covers a broad region of feature space.  ``ga_search`` tunes a spec
until simulated series match a target feature vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    Dataset,
    FeaturecastError,
    RngStream,
    TimeSeries,
    ValidationError,
    min_history,
)

DIVERGENCE_LIMIT = 1e12
MAX_RETRIES = 100


class DivergenceError(FeaturecastError, RuntimeError):
    """A simulated path left the +-1e12 band."""


class RetryExhaustedError(FeaturecastError, RuntimeError):
    pass


@dataclass(frozen=True)
class MarComponent:
    intercept: float
    coefs: tuple  # AR coefficients for lags 1..p
    sigma: float

    @property
    def order(self) -> int:
        return len(self.coefs)


@dataclass(frozen=True)
class MarSpec:
    weights: tuple
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.components) or len(self.weights) == 0:
            raise ValidationError("need one weight per component and K >= 1")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("mixture weights must be positive and sum to 1")
        if any(not c.sigma > 0 for c in self.components):
            raise ValidationError("noise scales must be positive")

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def max_order(self) -> int:
        return max(c.order for c in self.components)

    def to_dict(self) -> dict:
        return {
            "weights": list(self.weights),
            "components": [
                {"intercept": c.intercept, "coefs": list(c.coefs), "sigma": c.sigma}
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarSpec":
        comps = tuple(
            MarComponent(float(c["intercept"]), tuple(map(float, c["coefs"])), float(c["sigma"]))
            for c in d["components"]
        )
        return cls(tuple(map(float, d["weights"])), comps)


@dataclass(frozen=True)
class MultiSeasonalSpec:
    components: tuple  # of (MarSpec, period, weight)

    def __post_init__(self):
        w = np.array([c[2] for c in self.components], dtype=float)
        if w.size == 0 or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("aggregation weights must sum to 1")
        if w.size >= 2 and np.any((w <= 0) | (w >= 1)):
            raise ValidationError("aggregation weights must lie in (0, 1)")


def _simplex(rng: RngStream, K: int) -> tuple:
    if K == 1:
        return (1.0,)
    w = rng.dirichlet(np.ones(K))
    w = w / w.sum()
    return tuple(float(x) for x in w)


def _sample_component(rng: RngStream, order: int, period: int) -> MarComponent:
    intercept = float(rng.normal(0.0, 2.0))
    coefs = [float(rng.normal(0.0, 0.5 / j)) for j in range(1, order + 1)]
    if period > 1:
        # Seasonal lag so seasonal specs can actually produce seasonality.
        coefs += [0.0] * (period - len(coefs))
        coefs[period - 1] += float(rng.normal(0.0, 0.5))
    sigma = float(math.exp(rng.normal(0.0, 1.0)))
    return MarComponent(intercept, tuple(coefs), sigma)


def sample_mar_spec(rng: RngStream, K: int, max_order: int, period: int = 1) -> MarSpec:
    """Draw a K-component MAR spec from the default parameter priors.

    Weights come from a flat Dirichlet, orders are uniform on ``1..max_order``,
    intercepts ~ N(0, 2), lag-j coefficients ~ N(0, 0.5/j), and
    ``sigma = exp(N(0, 1))``.  With ``period > 1`` every component also gets
    an N(0, 0.5) coefficient at the seasonal lag.
    """
    if K < 1 or max_order < 1:
        raise ValidationError("K and max_order must be >= 1")
    weights = _simplex(rng, K)
    orders = rng.integers(1, max_order + 1, size=K)
    comps = tuple(_sample_component(rng, int(p), period) for p in orders)
    return MarSpec(weights, comps)


def default_burn_in(spec: MarSpec) -> int:
    return 50 + spec.max_order


def simulate(
    spec: MarSpec,
    length: int,
    burn_in: int | None = None,
    rng: RngStream | None = None,
    *,
    period: int = 1,
    series_id: str = "sim",
) -> TimeSeries:
    """Simulate one path; each step picks a component with probability alpha_k."""
    if length < 1:
        raise ValidationError("length must be >= 1")
    if rng is None:
        raise ValidationError("an RngStream is required")
    if burn_in is None:
        burn_in = default_burn_in(spec)
    n = burn_in + length
    p = spec.max_order
    K = spec.K

    ks = rng.choice(K, size=n, p=np.asarray(spec.weights)) if K > 1 else np.zeros(n, dtype=int)
    z = rng.standard_normal(n)

    # Coefficient matrix padded to a common order; row k holds lags 1..p.
    phi = np.zeros((K, p))
    for k, c in enumerate(spec.components):
        phi[k, : c.order] = c.coefs
    intercept = np.array([c.intercept for c in spec.components])
    sigma = np.array([c.sigma for c in spec.components])

    x = np.zeros(p + n)  # x[0:p] are the zero initial values
    for t in range(n):
        k = ks[t]
        past = x[t : t + p][::-1]  # lags 1..p
        val = intercept[k] + float(phi[k] @ past) + sigma[k] * z[t]
        if not abs(val) <= DIVERGENCE_LIMIT:
            raise DivergenceError(f"path exceeded {DIVERGENCE_LIMIT:g} at step {t}")
        x[p + t] = val
    return TimeSeries(series_id, period, x[p + burn_in :])


def sample_aggregation_weights(rng: RngStream, M: int) -> tuple:
    """omega_m = gamma_m / sum(gamma), gamma_m ~ U(0, 1)."""
    if M == 1:
        return (1.0,)
    g = rng.uniform(0.0, 1.0, size=M)
    while np.any(g == 0.0):
        g = rng.uniform(0.0, 1.0, size=M)
    return tuple(float(x) for x in g / g.sum())


def simulate_multi_seasonal(
    spec: MultiSeasonalSpec, length: int, rng: RngStream, *, series_id: str = "sim"
) -> TimeSeries:
    """Weighted sum of independently simulated single-period components.

    Components draw from ``rng`` in order, so a single-component spec
    reproduces :func:`simulate` on the same stream.
    """
    periods = [int(c[1]) for c in spec.components]
    if any(F > length / 2 for F in periods):
        raise ValidationError("every component period must be <= length / 2")
    total = np.zeros(length)
    for mar, F, w in spec.components:
        total += w * simulate(mar, length, None, rng, period=int(F)).values
    return TimeSeries(series_id, max(periods), total)


def generate_dataset(
    count: int,
    length_range: tuple[int, int],
    period: int,
    K: int,
    rng: RngStream,
    *,
    max_order: int = 3,
    horizon: int = 1,
    id_prefix: str = "S",
) -> Dataset:
    """Generate ``count`` series, each from a freshly sampled spec.

    Series ``i`` draws only from ``rng.spawn(i)``; divergent specs are
    resampled from that same stream up to 100 times.
    """
    lo, hi = int(length_range[0]), int(length_range[1])
    if count < 1:
        raise ValidationError("count must be >= 1")
    if lo > hi:
        raise ValidationError("length range is empty")
    if lo < horizon + min_history(period):
        raise ValidationError(
            f"minimum length {lo} is below the required history {horizon + min_history(period)}"
        )
    width = len(str(count - 1))
    out = []
    for i in range(count):
        sub = rng.spawn(i)
        length = int(sub.integers(lo, hi + 1))
        sid = f"{id_prefix}{i:0{width}d}"
        for _attempt in range(MAX_RETRIES):
            spec = sample_mar_spec(sub, K, max_order, period)
            try:
                out.append(simulate(spec, length, None, sub, period=period, series_id=sid))
                break
            except DivergenceError:
                continue
        else:
            raise RetryExhaustedError(f"series {sid}: {MAX_RETRIES} consecutive divergent specs")
    return Dataset(tuple(out), horizon)


# --- genetic search ------------------------------------------------------------


@dataclass
class GaConfig:
    target: dict
    population_size: int = 20
    generations: int = 25
    mutation_scale: float = 0.1
    crossover_rate: float = 0.8
    samples_per_candidate: int = 4
    tolerance: float = 0.1
    K: int = 2
    max_order: int = 3
    tournament_size: int = 3

    def __post_init__(self):
        if self.population_size < 4:
            raise ValidationError("population_size must be >= 4")
        if self.samples_per_candidate < 1 or self.generations < 1:
            raise ValidationError("generations and samples_per_candidate must be >= 1")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValidationError("crossover_rate must lie in [0, 1]")
        if not self.mutation_scale > 0:
            raise ValidationError("mutation_scale must be positive")
        if self.tolerance < 0:
            raise ValidationError("tolerance must be nonnegative")
        if not self.target:
            raise ValidationError("target feature vector is empty")


@dataclass
class GaResult:
    spec: MarSpec
    distance: float
    converged: bool
    initial_best: float
    history: list = field(default_factory=list)  # best-so-far distance per generation


def _feature_distance(spec, names, target, length, period, samples, rng) -> float:
    from .features import extract

    acc = np.zeros(len(names))
    for s in range(samples):
        try:
            ts = simulate(spec, length, None, rng.spawn(s), period=period)
        except DivergenceError:
            return math.inf
        fv = extract(ts)
        acc += [fv[n] for n in names]
    return float(np.linalg.norm(acc / samples - target))


def _crossover(a: MarSpec, b: MarSpec, lam: float) -> MarSpec:
    """Arithmetic blend; the child keeps parent ``a``'s component orders."""
    w = lam * np.asarray(a.weights) + (1 - lam) * np.asarray(b.weights)
    w = w / w.sum()
    comps = []
    for ca, cb in zip(a.components, b.components):
        pb = np.zeros(ca.order)
        m = min(ca.order, cb.order)
        pb[:m] = cb.coefs[:m]
        coefs = lam * np.asarray(ca.coefs) + (1 - lam) * pb
        comps.append(
            MarComponent(
                lam * ca.intercept + (1 - lam) * cb.intercept,
                tuple(float(c) for c in coefs),
                lam * ca.sigma + (1 - lam) * cb.sigma,
            )
        )
    return MarSpec(_renormalize(w), tuple(comps))


def _renormalize(w) -> tuple:
    w = np.maximum(np.asarray(w, dtype=float), 1e-6)
    w = w / w.sum()
    return tuple(float(x) for x in w)


def _mutate(spec: MarSpec, scale: float, rng: RngStream) -> MarSpec:
    w = np.asarray(spec.weights) + rng.normal(0.0, scale, size=spec.K) * np.asarray(spec.weights)
    comps = []
    for c in spec.components:
        coefs = np.asarray(c.coefs) + rng.normal(0.0, scale, size=c.order)
        comps.append(
            MarComponent(
                c.intercept + float(rng.normal(0.0, scale)),
                tuple(float(x) for x in coefs),
                c.sigma * math.exp(float(rng.normal(0.0, scale))),
            )
        )
    return MarSpec(_renormalize(np.abs(w)), tuple(comps))


def ga_search(config: GaConfig, period: int, length: int, rng: RngStream) -> GaResult:
    """Evolve MAR specs toward ``config.target``.

    Fitness is the Euclidean distance between the target and the mean
    feature vector of ``samples_per_candidate`` simulations.  Candidate ``j``
    of generation ``g`` is scored on stream ``rng.spawn(1, g, j)``, so scores
    do not depend on evaluation order.  The best individual is carried over
    unchanged each generation.
    """
    from .features import CATALOG

    names = [n for n in CATALOG if n in config.target]
    unknown = set(config.target) - set(names)
    if unknown:
        raise ValidationError(f"unknown target features: {sorted(unknown)}")
    if "length_log" in names:
        raise ValidationError("length_log is not a scale-free shape feature; drop it from the target")
    target = np.array([float(config.target[n]) for n in names])

    init_rng = rng.spawn(0)
    pop = [
        sample_mar_spec(init_rng, config.K, config.max_order, period)
        for _ in range(config.population_size)
    ]

    def score(g, population, skip=0):
        return [
            _feature_distance(
                spec, names, target, length, period, config.samples_per_candidate, rng.spawn(1, g, j)
            )
            for j, spec in enumerate(population)
            if j >= skip
        ]

    fit = score(0, pop)
    best_i = int(np.argmin(fit))
    best_spec, best_fit = pop[best_i], fit[best_i]
    initial_best = best_fit
    history = [best_fit]

    for g in range(1, config.generations):
        op_rng = rng.spawn(2, g)
        children = [best_spec]
        while len(children) < config.population_size:
            pa = _tournament(pop, fit, config.tournament_size, op_rng)
            if op_rng.uniform() < config.crossover_rate:
                pb = _tournament(pop, fit, config.tournament_size, op_rng)
                child = _crossover(pa, pb, float(op_rng.uniform()))
            else:
                child = pa
            children.append(_mutate(child, config.mutation_scale, op_rng))
        pop = children
        fit = [best_fit] + score(g, pop, skip=1)
        i = int(np.argmin(fit))
        if fit[i] < best_fit:
            best_spec, best_fit = pop[i], fit[i]
        history.append(best_fit)

    return GaResult(best_spec, best_fit, best_fit <= config.tolerance, initial_best, history)


def _tournament(pop, fit, size, rng) -> MarSpec:
    idx = rng.integers(0, len(pop), size=min(size, len(pop)))
    return pop[int(min(idx, key=lambda i: (fit[i], i)))]
