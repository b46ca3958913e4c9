"""Date-indexed store of ensemble forecasts and verifying observations."""
from __future__ import annotations

import datetime as dt
from typing import Iterable, Sequence

import numpy as np

from .core import DataError, ForecastCase, InfeasibleError, MarginId, ObservationRecord


def to_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[D]").astype(object)
    return dt.date.fromisoformat(str(value))


class Archive:
    """Dense, date-indexed forecast/observation archive for one lead time.

    Parameters
    ----------
    margins : sequence of MarginId
        All margins must share one lead time.
    dates : sequence of dates
        Unique; stored sorted.
    forecasts : ndarray, shape (D, L, M)
        NaN marks a missing margin forecast.
    observations : ndarray, shape (D, L)
        NaN marks a missing observation.
    """

    def __init__(self, margins: Sequence[MarginId], dates, forecasts, observations):
        margins = tuple(margins)
        if len(set(margins)) != len(margins):
            raise DataError("duplicate margins")
        leads = {m.lead_time for m in margins}
        if len(leads) > 1:
            raise DataError(f"an archive holds a single lead time, got {sorted(leads)}")
        days = np.array([np.datetime64(to_date(d), "D") for d in dates], dtype="datetime64[D]")
        fc = np.asarray(forecasts, dtype=float)
        obs = np.asarray(observations, dtype=float)
        L = len(margins)
        if fc.ndim != 3 or fc.shape[:2] != (days.size, L):
            raise DataError(f"forecast array shape {fc.shape} does not match ({days.size}, {L}, M)")
        if obs.shape != (days.size, L):
            raise DataError(f"observation array shape {obs.shape} does not match ({days.size}, {L})")
        if days.size and fc.shape[2] < 2:
            raise DataError("ensembles need at least 2 members")
        if np.unique(days).size != days.size:
            u, c = np.unique(days, return_counts=True)
            raise DataError(f"duplicate date {u[c > 1][0]}")
        if np.isinf(fc).any() or np.isinf(obs).any():
            raise DataError("infinite values in archive")
        # a margin forecast is either complete or entirely missing
        part = np.isnan(fc).any(axis=2) & ~np.isnan(fc).all(axis=2)
        if part.any():
            d, l = np.argwhere(part)[0]
            raise DataError(f"forecast for {margins[l]} on {days[d]} has missing members")

        order = np.argsort(days, kind="stable")
        order_m = sorted(range(L), key=lambda i: margins[i])
        self.margins = tuple(margins[i] for i in order_m)
        self.dates = days[order]
        self.forecasts = fc[order][:, order_m, :]
        self.observations = obs[order][:, order_m]
        for arr in (self.dates, self.forecasts, self.observations):
            arr.flags.writeable = False
        self._index = {d: i for i, d in enumerate(self.dates.astype(object))}
        self._summary = None

    # -- construction -------------------------------------------------------

    @classmethod
    def from_records(cls, forecasts: Iterable[ForecastCase] = (),
                     observations: Iterable[ObservationRecord] = (),
                     margins: Sequence[MarginId] | None = None) -> "Archive":
        forecasts = list(forecasts)
        observations = list(observations)
        if margins is None:
            found = set()
            for f in forecasts:
                found.update(f.members)
            for o in observations:
                found.update(o.values)
            margins = sorted(found)
        margins = tuple(margins)
        mpos = {m: i for i, m in enumerate(margins)}
        sizes = {f.n_members for f in forecasts if f.members}
        if len(sizes) > 1:
            raise DataError(f"inconsistent ensemble sizes {sorted(sizes)}")
        M = sizes.pop() if sizes else 2
        seen_f = set()
        seen_o = set()
        for f in forecasts:
            if f.verification_date in seen_f:
                raise DataError(f"duplicate forecast date {f.verification_date}")
            seen_f.add(f.verification_date)
        for o in observations:
            if o.date in seen_o:
                raise DataError(f"duplicate observation date {o.date}")
            seen_o.add(o.date)
        dates = sorted(seen_f | seen_o)
        dpos = {d: i for i, d in enumerate(dates)}
        fc = np.full((len(dates), len(margins), M), np.nan)
        obs = np.full((len(dates), len(margins)), np.nan)
        for f in forecasts:
            for m, vals in f.members.items():
                fc[dpos[f.verification_date], mpos[m]] = vals
        for o in observations:
            for m, v in o.values.items():
                obs[dpos[o.date], mpos[m]] = v
        return cls(margins, dates, fc, obs)

    # -- basic queries ------------------------------------------------------

    def __len__(self):
        return self.dates.size

    def __eq__(self, other):
        if not isinstance(other, Archive):
            return NotImplemented
        return (self.margins == other.margins
                and np.array_equal(self.dates, other.dates)
                and self.forecasts.shape == other.forecasts.shape
                and np.array_equal(self.forecasts, other.forecasts, equal_nan=True)
                and np.array_equal(self.observations, other.observations, equal_nan=True))

    def __repr__(self):
        span = f"{self.dates[0]}..{self.dates[-1]}" if len(self) else "empty"
        return f"Archive({len(self.margins)} margins, M={self.n_members}, {span})"

    @property
    def n_members(self) -> int:
        return self.forecasts.shape[2]

    @property
    def lead_time(self) -> int:
        return self.margins[0].lead_time if self.margins else 24

    @property
    def lead_days(self) -> int:
        return self.lead_time // 24

    @property
    def date_list(self) -> list[dt.date]:
        return list(self.dates.astype(object))

    def index(self, date) -> int | None:
        return self._index.get(to_date(date))

    def init_date(self, date) -> dt.date:
        return to_date(date) - dt.timedelta(days=self.lead_days)

    @property
    def forecast_complete(self) -> np.ndarray:
        return ~np.isnan(self.forecasts).any(axis=(1, 2))

    @property
    def observation_complete(self) -> np.ndarray:
        return ~np.isnan(self.observations).any(axis=1)

    @property
    def complete(self) -> np.ndarray:
        """Dates with every margin's forecast and observation present."""
        return self.forecast_complete & self.observation_complete

    @property
    def partial_dates(self) -> list[dt.date]:
        """Dates where some but not all margins are present."""
        fmiss = np.isnan(self.forecasts).all(axis=2)
        omiss = np.isnan(self.observations)
        part = (fmiss.any(axis=1) & ~fmiss.all(axis=1)) | (omiss.any(axis=1) & ~omiss.all(axis=1))
        return list(self.dates[part].astype(object))

    def forecast(self, date) -> ForecastCase | None:
        i = self.index(date)
        if i is None:
            return None
        members = {m: tuple(self.forecasts[i, l].tolist())
                   for l, m in enumerate(self.margins) if not np.isnan(self.forecasts[i, l, 0])}
        if not members:
            return None
        d = to_date(date)
        return ForecastCase(self.init_date(d), d, members)

    def observation(self, date) -> ObservationRecord | None:
        i = self.index(date)
        if i is None:
            return None
        values = {m: float(self.observations[i, l])
                  for l, m in enumerate(self.margins) if not np.isnan(self.observations[i, l])}
        if not values:
            return None
        return ObservationRecord(to_date(date), values)

    def forecast_records(self) -> list[ForecastCase]:
        return [f for f in map(self.forecast, self.date_list) if f is not None]

    def observation_records(self) -> list[ObservationRecord]:
        return [o for o in map(self.observation, self.date_list) if o is not None]

    # -- eligibility --------------------------------------------------------

    def eligible_mask(self, before) -> np.ndarray:
        """Complete dates strictly before ``before``."""
        return self.complete & (self.dates < np.datetime64(to_date(before), "D"))

    def n_eligible(self, before) -> int:
        return int(self.eligible_mask(before).sum())

    def check_feasible(self, before, n: int, window: int = 0) -> int:
        """Require ``D >= max(n, window)`` complete dates before ``before``; return D."""
        D = self.n_eligible(before)
        if D < max(n, window):
            raise InfeasibleError(
                f"only D={D} complete dates before {to_date(before)}; need max(N={n}, Lambda={window})")
        return D

    def ensemble_summary(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-date, per-margin ensemble mean and sd (M - 1 denominator)."""
        if self._summary is None:
            mean = self.forecasts.mean(axis=2)
            sd = self.forecasts.std(axis=2, ddof=1)
            self._summary = (mean, sd)
        return self._summary
