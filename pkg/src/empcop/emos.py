"""Univariate EMOS (non-homogeneous Gaussian regression) per margin.

The predictive law is ``N(a + b * mean, c + d * var)`` where mean and var are
the raw ensemble's mean and variance (M - 1 denominator). Parameters are
fitted by minimizing the mean closed-form Gaussian CRPS over a rolling
training window, with ``c = c_min + g**2`` and ``d = h**2`` so the simplex
search runs unconstrained.
"""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import _kernels
from .archive import Archive, to_date
from .core import DataError, ForecastCase, InfeasibleError, MarginId

C_MIN = 1e-4
XATOL = 1e-8
ITER_PER_DIM = 500


class EmosFitError(RuntimeError):
    """The optimizer produced no usable optimum."""


@dataclass(frozen=True)
class PredictiveLaw:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        if not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu}")

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def ppf(self, q):
        return self.mu + self.sigma * special.ndtri(np.asarray(q, dtype=float))


@dataclass(frozen=True)
class EmosModel:
    margin: MarginId
    a: float
    b: float
    c: float
    d: float
    training_window: tuple[dt.date, ...] = ()
    mean_crps: float = float("nan")
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        if self.c < 0 or self.d < 0:
            raise ValueError(f"variance parameters must be nonnegative, got c={self.c}, d={self.d}")

    def variance(self, ens_var):
        return self.c + self.d * np.asarray(ens_var, dtype=float)

    def to_dict(self) -> dict:
        return {"margin": [self.margin.variable, self.margin.station, self.margin.lead_time],
                "a": self.a, "b": self.b, "c": self.c, "d": self.d,
                "training_window": [d.isoformat() for d in self.training_window],
                "mean_crps": self.mean_crps, "converged": self.converged}


def gaussian_crps(law: PredictiveLaw, y):
    """Closed-form CRPS of a normal law; vectorized over ``y``."""
    z = (np.asarray(y, dtype=float) - law.mu) / law.sigma
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    out = law.sigma * (z * (2.0 * special.ndtr(z) - 1.0) + 2.0 * pdf - 1.0 / math.sqrt(math.pi))
    return float(out) if np.ndim(out) == 0 else out


def sample_equidistant(law: PredictiveLaw, n_samples: int) -> np.ndarray:
    """Quantiles at levels 1/(N+1), ..., N/(N+1), ascending."""
    if n_samples < 1:
        raise ValueError(f"need at least one sample, got {n_samples}")
    levels = np.arange(1, n_samples + 1) / (n_samples + 1.0)
    return law.ppf(levels)


def ensemble_moments(members) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance (M - 1 denominator) along the last axis."""
    x = np.asarray(members, dtype=float)
    if x.shape[-1] < 2:
        raise DataError("ensemble moments need at least 2 members")
    return x.mean(axis=-1), x.var(axis=-1, ddof=1)


def predictive_law(model: EmosModel, forecast: ForecastCase) -> PredictiveLaw:
    if model.margin not in forecast.members:
        raise DataError(f"forecast for {forecast.verification_date} has no margin {model.margin}")
    mean, var = ensemble_moments(forecast.members[model.margin])
    return PredictiveLaw(model.a + model.b * float(mean), math.sqrt(float(model.variance(var))))


def _to_theta(a, b, c, d, c_min):
    return np.array([a, b, math.sqrt(max(c - c_min, 0.0)), math.sqrt(max(d, 0.0))])


def fit_gaussian_emos(xbar, s2, y, *, c_min=C_MIN, warm_start=None, fixed_b=None,
                      margin=None, training_window=()) -> EmosModel:
    """Fit (a, b, c, d) by minimum mean CRPS on training triples.

    Parameters
    ----------
    xbar, s2, y : array_like, shape (n,)
        Ensemble means, ensemble variances and verifying observations.
    warm_start : EmosModel, optional
        Extra starting point, typically the previous day's fit.
    fixed_b : float, optional
        Hold the ensemble-mean coefficient at this value.
    """
    xbar = np.asarray(xbar, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (xbar.shape == s2.shape == y.shape) or xbar.ndim != 1 or xbar.size == 0:
        raise DataError("training arrays must be non-empty and of equal length")
    if not (np.isfinite(xbar).all() and np.isfinite(s2).all() and np.isfinite(y).all()):
        raise DataError("non-finite training data")

    b0 = 1.0 if fixed_b is None else float(fixed_b)
    resid = y - b0 * xbar
    cold = _to_theta(float(resid.mean()), b0, float(resid.var()), 1.0, c_min)
    starts = [cold]
    if warm_start is not None:
        w_b = warm_start.b if fixed_b is None else b0
        starts.append(_to_theta(warm_start.a, w_b, warm_start.c, warm_start.d, c_min))
    free = np.array([0, 2, 3] if fixed_b is not None else [0, 1, 2, 3])
    maxiter = ITER_PER_DIM * free.size

    best = None
    for x0 in starts:
        # one restart from each start's optimum guards against premature collapse
        theta, f, nit, diam = _kernels.nelder_mead_emos(x0, free, xbar, s2, y, c_min, XATOL, maxiter)
        theta2, f2, nit2, diam2 = _kernels.nelder_mead_emos(theta, free, xbar, s2, y, c_min, XATOL, maxiter)
        if f2 <= f:
            theta, f, diam = theta2, f2, diam2
        if math.isfinite(f) and (best is None or f < best[1]):
            best = (theta, f, nit + nit2, diam)
    if best is None:
        raise EmosFitError(f"no finite optimum for {margin} from {len(starts)} starts "
                           f"(n={y.size}, mean y={y.mean():.4g})")
    theta, f, nit, diam = best
    a, b, g, h = (float(v) for v in theta)
    return EmosModel(margin if margin is not None else MarginId("v", "s"), a, b, c_min + g * g, h * h,
                     tuple(training_window), f, diam <= XATOL, nit)


def training_dates(archive: Archive, margin: MarginId, verification_date, window_length: int,
                   max_lookback: int | None = None) -> list[dt.date]:
    """The last ``window_length`` usable dates strictly before the verification date.

    A date is usable when both the margin's forecast and observation exist.
    The search reaches back at most ``max_lookback`` days (default 2 * window).
    """
    if margin not in archive.margins:
        raise DataError(f"archive has no margin {margin}")
    l = archive.margins.index(margin)
    v = np.datetime64(to_date(verification_date), "D")
    lookback = 2 * window_length if max_lookback is None else max_lookback
    in_range = (archive.dates < v) & (archive.dates >= v - np.timedelta64(lookback, "D"))
    usable = in_range & ~np.isnan(archive.forecasts[:, l, 0]) & ~np.isnan(archive.observations[:, l])
    idx = np.flatnonzero(usable)
    if idx.size < window_length:
        raise InfeasibleError(
            f"{margin}: only {idx.size} usable training pairs within {lookback} days before "
            f"{to_date(verification_date)}; need {window_length}")
    return list(archive.dates[idx[-window_length:]].astype(object))


def fit_emos(archive: Archive, margin: MarginId, verification_date, window_length: int = 50, *,
             warm_start: EmosModel | None = None, c_min: float = C_MIN) -> EmosModel:
    """Fit EMOS for one margin on the rolling window ahead of ``verification_date``."""
    dates = training_dates(archive, margin, verification_date, window_length)
    l = archive.margins.index(margin)
    idx = [archive.index(d) for d in dates]
    mean, var = ensemble_moments(archive.forecasts[idx, l, :])
    y = archive.observations[idx, l]
    return fit_gaussian_emos(mean, var, y, c_min=c_min, warm_start=warm_start,
                             margin=margin, training_window=dates)
