"""Dependence templates: ECC, Schaake shuffle variants and SimSchaake.

Observation-based templates take the observations of N archive dates and
rank them per margin. The variants differ only in how the dates are chosen:

* Clark window -- same season (+/- 7 days of year) in other years
* random -- uniformly from all complete past dates
* SimSchaake -- the N past dates whose ensemble forecasts are closest to the
  current one under a mean/spread similarity criterion
"""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .archive import Archive, to_date
from .core import (DataError, ForecastCase, InfeasibleError, MarginId, RankTemplate,
                   derive_template)


@dataclass(frozen=True)
class SimilarityScore:
    candidate_date: dt.date
    delta: float

    @property
    def standardized(self) -> float:
        return standardize_similarity(self.delta)


@dataclass(frozen=True)
class MarginStandardizer:
    """Per-margin affine standardization ``(value - center) / scale``."""

    center: Mapping[MarginId, float]
    scale: Mapping[MarginId, float]

    def __post_init__(self):
        for m, s in self.scale.items():
            if not s > 0:
                raise ValueError(f"scale for {m} must be positive, got {s}")

    @classmethod
    def identity(cls, margins):
        return cls({m: 0.0 for m in margins}, {m: 1.0 for m in margins})

    @classmethod
    def fit(cls, archive: Archive, before=None) -> "MarginStandardizer":
        """Mean and sd of the ensemble means over the eligible pool."""
        mask = archive.complete if before is None else archive.eligible_mask(before)
        if mask.sum() < 2:
            raise InfeasibleError("need at least 2 complete dates to fit a standardizer")
        means, _ = archive.ensemble_summary()
        center = means[mask].mean(axis=0)
        scale = means[mask].std(axis=0, ddof=1)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(dict(zip(archive.margins, center.tolist())), dict(zip(archive.margins, scale.tolist())))

    def vectors(self, margins) -> tuple[np.ndarray, np.ndarray]:
        try:
            return (np.array([self.center[m] for m in margins]),
                    np.array([self.scale[m] for m in margins]))
        except KeyError as exc:
            raise DataError(f"standardizer has no entry for {exc.args[0]}") from None


def standardize(values, standardizer: MarginStandardizer, margins=None):
    """Apply the standardizer to a mapping or an ``(L, ...)`` array."""
    if isinstance(values, Mapping):
        return {m: (np.asarray(v, dtype=float) - standardizer.center[m]) / standardizer.scale[m]
                for m, v in values.items()}
    arr = np.asarray(values, dtype=float)
    if margins is None:
        raise DataError("margins are required to standardize an array")
    center, scale = standardizer.vectors(margins)
    shape = (-1,) + (1,) * (arr.ndim - 1)
    return (arr - center.reshape(shape)) / scale.reshape(shape)


def _summary(members: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if members.shape[-1] < 2:
        raise DataError("similarity needs at least 2 members per margin")
    return members.mean(axis=-1), members.std(axis=-1, ddof=1)


def _delta(mean_a, sd_a, mean_b, sd_b):
    L = mean_a.shape[-1]
    return np.sqrt((((mean_a - mean_b) ** 2).sum(axis=-1) + ((sd_a - sd_b) ** 2).sum(axis=-1)) / L)


def similarity(x_t, x_td) -> float:
    """Root mean squared difference of ensemble means and sds across margins.

    Inputs are ``(L*, M)`` arrays or mappings ``margin -> members``.
    """
    if isinstance(x_t, Mapping) or isinstance(x_td, Mapping):
        if not (isinstance(x_t, Mapping) and isinstance(x_td, Mapping)) or set(x_t) != set(x_td):
            raise DataError("similarity needs the same margin set on both sides")
        keys = sorted(x_t)
        x_t = [x_t[k] for k in keys]
        x_td = [x_td[k] for k in keys]
    a = np.asarray(x_t, dtype=float)
    b = np.asarray(x_td, dtype=float)
    if a.ndim != 2 or a.shape != b.shape:
        raise DataError(f"similarity shape mismatch: {a.shape} vs {b.shape}")
    ma, sa = _summary(a)
    mb, sb = _summary(b)
    return float(_delta(ma, sa, mb, sb))


def standardize_similarity(delta) -> float:
    """Map a distance in [0, inf) to a similarity in (0, 1]."""
    if delta < 0:
        raise ValueError(f"similarity criterion must be nonnegative, got {delta}")
    return math.exp(-delta)


def ecc_template(forecast: ForecastCase, rng_seed=None, margins=None) -> RankTemplate:
    """Template from the raw ensemble itself (N = M)."""
    margins = forecast.margins if margins is None else tuple(margins)
    return derive_template(forecast.as_array(margins), rng_seed, margins=margins, source="ecc")


def day_of_year_365(d: dt.date) -> int:
    """Day of year on a 365-day calendar; Feb 29 shares day 59 with Feb 28."""
    doy = d.timetuple().tm_yday
    leap = d.year % 4 == 0 and (d.year % 100 != 0 or d.year % 400 == 0)
    if leap and doy >= 60:
        doy -= 1
    return doy


def clark_window_dates(archive: Archive, verification_date, window_days: int = 7) -> list[dt.date]:
    """Dates within +/- ``window_days`` of the verification day of year, other years only."""
    if len(archive) == 0:
        raise DataError("archive is empty")
    target = to_date(verification_date)
    t_doy = day_of_year_365(target)
    out = []
    for d, ok in zip(archive.date_list, archive.observation_complete):
        if not ok or d.year == target.year:
            continue
        gap = abs(day_of_year_365(d) - t_doy)
        if min(gap, 365 - gap) <= window_days:
            out.append(d)
    return out


def random_schaake_dates(archive: Archive, before, n: int, rng_seed=None) -> list[dt.date]:
    """``n`` distinct complete dates strictly before ``before``, drawn uniformly."""
    if n < 1:
        raise ValueError(f"need n >= 1 dates, got {n}")
    pool = archive.dates[archive.eligible_mask(before)]
    if pool.size < n:
        raise InfeasibleError(f"only {pool.size} complete dates before {to_date(before)}; need {n}")
    rng = np.random.default_rng(rng_seed)
    pick = rng.choice(pool.size, size=n, replace=False)
    return list(pool[pick].astype(object))


def similarity_to_archive(archive: Archive, current: ForecastCase, mask=None,
                          standardizer: MarginStandardizer | None = None) -> np.ndarray:
    """Similarity of ``current`` against every archive date (NaN where masked out)."""
    if set(current.members) != set(archive.margins):
        raise DataError("current forecast and archive cover different margins")
    if current.n_members != archive.n_members:
        raise DataError(f"current forecast has {current.n_members} members, archive {archive.n_members}")
    cur = current.as_array(archive.margins)
    if standardizer is None:
        means, sds = archive.ensemble_summary()
    else:
        center, scale = standardizer.vectors(archive.margins)
        means, sds = archive.ensemble_summary()
        means = (means - center) / scale
        sds = sds / scale
        cur = standardize(cur, standardizer, archive.margins)
    cm, cs = _summary(cur)
    delta = _delta(means, sds, cm, cs)
    if mask is not None:
        delta = np.where(mask, delta, np.nan)
    return delta


def simschaake_dates(archive: Archive, current: ForecastCase, n: int,
                     standardizer: MarginStandardizer | None = None, *,
                     window_length: int = 0, transform: bool = False) -> list[SimilarityScore]:
    """The ``n`` eligible dates most similar to ``current``.

    Eligible dates are complete and strictly before the current
    initialization date. Ties go to the earlier date. With ``transform`` the
    selection maximizes ``exp(-delta)`` instead of minimizing ``delta``.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 dates, got {n}")
    mask = archive.eligible_mask(current.init_date)
    D = int(mask.sum())
    if D < max(n, window_length):
        raise InfeasibleError(
            f"SimSchaake infeasible for {current.verification_date}: D={D} < max(N={n}, Lambda={window_length})")
    idx = np.flatnonzero(mask)
    delta = similarity_to_archive(archive, current, standardizer=standardizer)[idx]
    # idx is in date order, so a stable sort breaks ties by earlier date
    if transform:
        # exp can merge deltas a few ulps apart; delta keeps the order strict
        order = np.lexsort((delta, -np.exp(-delta)))[:n]
    else:
        order = np.argsort(delta, kind="stable")[:n]
    dates = archive.dates[idx[order]].astype(object)
    return [SimilarityScore(d, float(v)) for d, v in zip(dates, delta[order])]


def observation_template(archive: Archive, dates: Sequence, margins=None, rng_seed=None,
                         source: str = "custom") -> RankTemplate:
    """Rank the observations of ``dates`` (in the given order) per margin."""
    margins = archive.margins if margins is None else tuple(margins)
    cols = [archive.margins.index(m) for m in margins]
    rows = []
    for d in dates:
        i = archive.index(d)
        if i is None:
            raise DataError(f"no observations on {to_date(d)}")
        row = archive.observations[i, cols]
        if np.isnan(row).any():
            missing = margins[int(np.flatnonzero(np.isnan(row))[0])]
            raise DataError(f"missing observation for {missing} on {to_date(d)}")
        rows.append(row)
    data = np.array(rows, dtype=float).T.reshape(len(margins), len(rows))
    return derive_template(data, rng_seed, margins=margins, source=source,
                           source_dates=[to_date(d) for d in dates])
