"""Synthetic multi-station scenarios and CSV archive persistence.

The generator builds a daily truth per station as

    seasonal cycle + predictable anomaly + unpredictable error

where the anomaly and the error are Gaussian fields with correlation
``exp(-dist / range)`` between stations. The anomaly is an AR(1) process in
time. Observations add independent noise. Ensemble members are centred on
``seasonal + anomaly + bias`` and perturbed with fields drawn from the same
law as the error, scaled by ``spread_factor``. With ``spread_factor = 1``,
``bias = 0`` and ``fold_obs_noise`` the members and the observation are
exchangeable, so the raw ensemble is calibrated.

The error scale is log-normal from day to day (``spread_variability``). The
ensemble spread follows its own log-normal scale whose log correlates with the
error's log scale at ``spread_skill``; below 1 the spread is an imperfect
guide to the day's uncertainty.
"""
from __future__ import annotations

import datetime as dt
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .archive import Archive, to_date
from .core import DataError, MarginId
from .verify import StationGeometry

log = logging.getLogger(__name__)

FORECAST_COLUMNS = ["date", "init_date", "variable", "station", "lead_hours", "member", "value"]
OBSERVATION_COLUMNS = ["date", "variable", "station", "value"]
FORECAST_FILE = "forecasts.csv"
OBSERVATION_FILE = "observations.csv"
EIGEN_FLOOR = 1e-10


@dataclass
class SeasonalCycle:
    mean: float = 10.0
    amplitude: float = 10.0
    peak_day: float = 200.0

    def __call__(self, doy):
        return self.mean + self.amplitude * np.cos(2.0 * np.pi * (np.asarray(doy) - self.peak_day) / 365.25)


@dataclass
class ScenarioConfig:
    stations: list
    distances_km: list
    n_days: int = 1365
    start_date: dt.date = dt.date(2002, 1, 1)
    seasonal: list = field(default_factory=list)
    spatial_corr_range: float = 100.0
    obs_noise_sd: float = 0.5
    n_members: int = 50
    bias: float = 0.0
    spread_factor: float = 1.0
    fold_obs_noise: bool = False
    signal_sd: float = 3.0
    signal_persistence: float = 0.7
    error_sd: float = 1.5
    spread_variability: float = 0.3
    spread_skill: float = 1.0
    variable: str = "t2m"
    lead_hours: int = 24
    seed: int = 0

    def __post_init__(self):
        self.stations = [str(s) for s in self.stations]
        self.start_date = to_date(self.start_date)
        L = len(self.stations)
        if L < 1 or len(set(self.stations)) != L:
            raise ValueError("stations must be a non-empty list of unique names")
        dist = np.asarray(self.distance_matrix(), dtype=float)
        if dist.shape != (L, L) or not np.allclose(dist, dist.T) or np.diag(dist).any():
            raise ValueError("distances_km must be a symmetric station matrix with zero diagonal")
        if L > 1 and not (dist[~np.eye(L, dtype=bool)] > 0).all():
            raise ValueError("off-diagonal distances must be positive")
        if not self.seasonal:
            self.seasonal = [SeasonalCycle() for _ in self.stations]
        self.seasonal = [s if isinstance(s, SeasonalCycle) else SeasonalCycle(**s) for s in self.seasonal]
        if len(self.seasonal) != L:
            raise ValueError(f"{len(self.seasonal)} seasonal cycles for {L} stations")
        if self.n_members < 2:
            raise ValueError(f"n_members must be >= 2, got {self.n_members}")
        if not self.spread_factor > 0:
            raise ValueError(f"spread_factor must be positive, got {self.spread_factor}")
        if not self.spatial_corr_range > 0:
            raise ValueError(f"spatial_corr_range must be positive, got {self.spatial_corr_range}")
        if self.n_days < 1:
            raise ValueError(f"n_days must be positive, got {self.n_days}")
        for name in ("obs_noise_sd", "signal_sd", "error_sd", "spread_variability"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 <= self.spread_skill <= 1:
            raise ValueError("spread_skill must lie in [0, 1]")
        if not 0 <= self.signal_persistence < 1:
            raise ValueError("signal_persistence must lie in [0, 1)")
        if self.lead_hours < 0:
            raise ValueError("lead_hours must be nonnegative")

    def distance_matrix(self) -> np.ndarray:
        d = self.distances_km
        if isinstance(d, dict):
            L = len(self.stations)
            out = np.zeros((L, L))
            pos = {s: i for i, s in enumerate(self.stations)}
            for key, v in d.items():
                a, b = key.split("|") if isinstance(key, str) else key
                out[pos[a], pos[b]] = out[pos[b], pos[a]] = float(v)
            return out
        return np.asarray(d, dtype=float)

    def geometry(self) -> StationGeometry:
        return StationGeometry.from_matrix(self.stations, self.distance_matrix())

    @property
    def margins(self) -> tuple[MarginId, ...]:
        return tuple(MarginId(self.variable, s, self.lead_hours) for s in self.stations)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["start_date"] = self.start_date.isoformat()
        out["distances_km"] = self.distance_matrix().tolist()
        return out


def correlation_factor(distances, corr_range) -> np.ndarray:
    """Spectral square root ``A`` with ``A @ A.T ~= exp(-dist / range)``."""
    C = np.exp(-np.asarray(distances, dtype=float) / corr_range)
    w, V = np.linalg.eigh(C)
    return V * np.sqrt(np.maximum(w, EIGEN_FLOOR))


def generate_scenario(config: ScenarioConfig) -> Archive:
    rng = np.random.default_rng(config.seed)
    L = len(config.stations)
    M = config.n_members
    A = correlation_factor(config.distance_matrix(), config.spatial_corr_range)
    phi = config.signal_persistence
    innov = config.signal_sd * math.sqrt(1.0 - phi * phi)

    dates = [config.start_date + dt.timedelta(days=k) for k in range(config.n_days)]
    fc = np.empty((config.n_days, L, M))
    obs = np.empty((config.n_days, L))
    anomaly = config.signal_sd * (A @ rng.standard_normal(L))
    for k, day in enumerate(dates):
        doy = day.timetuple().tm_yday
        season = np.array([s(doy) for s in config.seasonal])
        if k:
            anomaly = phi * anomaly + innov * (A @ rng.standard_normal(L))
        zk, ze = rng.standard_normal(2)
        ze = config.spread_skill * zk + math.sqrt(1.0 - config.spread_skill ** 2) * ze
        half_var = 0.5 * config.spread_variability ** 2
        err_sd = config.error_sd * math.exp(config.spread_variability * zk - half_var)
        ens_sd = config.error_sd * math.exp(config.spread_variability * ze - half_var)
        error = err_sd * (A @ rng.standard_normal(L))
        noise = config.obs_noise_sd * rng.standard_normal(L)
        obs[k] = season + anomaly + error + noise

        pert = ens_sd * (rng.standard_normal((M, L)) @ A.T)
        if config.fold_obs_noise:
            pert += config.obs_noise_sd * rng.standard_normal((M, L))
        centre = season + anomaly + config.bias
        fc[k] = (centre[None, :] + config.spread_factor * pert).T
    return Archive(config.margins, dates, fc, obs)


# -- CSV persistence ---------------------------------------------------------

def _paths(path, fmt):
    if fmt != "csv":
        raise ValueError(f"unsupported archive format {fmt!r}")
    p = Path(path)
    return p / FORECAST_FILE, p / OBSERVATION_FILE


def _fmt(values) -> list[str]:
    return [repr(v) for v in np.asarray(values, dtype=float).tolist()]


def write_archive(archive: Archive, path, format: str = "csv") -> None:
    """Write ``forecasts.csv`` and ``observations.csv`` into directory ``path``.

    Rows are ordered by date, then margin, then member. Missing entries are
    omitted; non-finite values are rejected.
    """
    fpath, opath = _paths(path, format)
    if not np.isfinite(archive.forecasts[~np.isnan(archive.forecasts)]).all():
        raise DataError("non-finite forecast value")
    if not np.isfinite(archive.observations[~np.isnan(archive.observations)]).all():
        raise DataError("non-finite observation value")
    os.makedirs(path, exist_ok=True)

    D, L, M = archive.forecasts.shape
    day_str = np.datetime_as_string(archive.dates, unit="D")
    init_str = np.datetime_as_string(archive.dates - np.timedelta64(archive.lead_days, "D"), unit="D")
    d_idx, l_idx, m_idx = np.nonzero(~np.isnan(archive.forecasts))
    vals = _fmt(archive.forecasts[d_idx, l_idx, m_idx])
    lines = [",".join(FORECAST_COLUMNS)]
    for d, l, m, v in zip(d_idx.tolist(), l_idx.tolist(), m_idx.tolist(), vals):
        mg = archive.margins[l]
        lines.append(f"{day_str[d]},{init_str[d]},{mg.variable},{mg.station},{mg.lead_time},{m + 1},{v}")
    fpath.write_text("\n".join(lines) + "\n", encoding="utf-8")

    d_idx, l_idx = np.nonzero(~np.isnan(archive.observations))
    vals = _fmt(archive.observations[d_idx, l_idx])
    lines = [",".join(OBSERVATION_COLUMNS)]
    for d, l, v in zip(d_idx.tolist(), l_idx.tolist(), vals):
        mg = archive.margins[l]
        lines.append(f"{day_str[d]},{mg.variable},{mg.station},{v}")
    opath.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_table(path, columns) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: empty file (missing header)") from None
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: parse error: {exc}") from None
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing column {missing[0]!r}")
    extra = [c for c in df.columns if c not in columns]
    if extra:
        raise DataError(f"{path}: unexpected column {extra[0]!r}")
    return df[columns]


def _parse_dates(path, col: pd.Series, name) -> np.ndarray:
    uniq, inv = np.unique(col.to_numpy(), return_inverse=True)
    parsed = pd.to_datetime(pd.Series(uniq), format="%Y-%m-%d", errors="coerce")
    bad = parsed.isna().to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad[inv])[0])
        raise DataError(f"{path}: line {row + 2}: field {name!r}: invalid date {col.iloc[row]!r}")
    return parsed.to_numpy().astype("datetime64[D]")[inv]


def _to_float(text) -> float:
    try:
        return float(text)
    except ValueError:
        return float("nan")


def _parse_numbers(path, col: pd.Series, name, integer=False) -> np.ndarray:
    # numpy's str -> float is correctly rounded; pandas' fast parser is not
    raw = col.to_numpy(dtype=str)
    try:
        num = raw.astype(float)
    except ValueError:
        num = np.array([_to_float(v) for v in raw])
    bad = ~np.isfinite(num)
    if integer:
        bad |= num != np.round(num)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        kind = "integer" if integer else "finite number"
        raise DataError(f"{path}: line {row + 2}: field {name!r}: expected {kind}, got {col.iloc[row]!r}")
    return num.astype(np.int64) if integer else num


def load_archive(path, format: str = "csv") -> Archive:
    """Load and validate the two CSV files in directory ``path``."""
    fpath, opath = _paths(path, format)
    return load_archive_files(fpath, opath)


def load_archive_files(forecast_path, observation_path) -> Archive:
    fdf = _read_table(forecast_path, FORECAST_COLUMNS)
    odf = _read_table(observation_path, OBSERVATION_COLUMNS)

    f_date = _parse_dates(forecast_path, fdf["date"], "date")
    f_init = _parse_dates(forecast_path, fdf["init_date"], "init_date")
    f_lead = _parse_numbers(forecast_path, fdf["lead_hours"], "lead_hours", integer=True)
    f_mem = _parse_numbers(forecast_path, fdf["member"], "member", integer=True)
    f_val = _parse_numbers(forecast_path, fdf["value"], "value")
    o_date = _parse_dates(observation_path, odf["date"], "date")
    o_val = _parse_numbers(observation_path, odf["value"], "value")

    for name, col, p in (("variable", fdf["variable"], forecast_path), ("station", fdf["station"], forecast_path),
                         ("variable", odf["variable"], observation_path), ("station", odf["station"], observation_path)):
        empty = (col.str.strip() == "").to_numpy()
        if empty.any():
            raise DataError(f"{p}: line {int(np.flatnonzero(empty)[0]) + 2}: field {name!r} is empty")

    leads = np.unique(f_lead)
    if leads.size > 1:
        raise DataError(f"{forecast_path}: field 'lead_hours': archive holds one lead time, got {leads.tolist()}")
    lead = int(leads[0]) if leads.size else 24
    if (f_lead < 0).any():
        raise DataError(f"{forecast_path}: field 'lead_hours' must be nonnegative")
    wrong = (f_date - f_init).astype(np.int64) != lead // 24
    if wrong.any():
        row = int(np.flatnonzero(wrong)[0])
        raise DataError(f"{forecast_path}: line {row + 2}: field 'init_date' inconsistent with date and lead_hours")
    if f_mem.size and f_mem.min() < 1:
        raise DataError(f"{forecast_path}: field 'member' must be >= 1")

    f_key = list(zip(fdf["variable"], fdf["station"]))
    o_key = list(zip(odf["variable"], odf["station"]))
    pairs = sorted(set(f_key) | set(o_key))
    margins = [MarginId(v, s, lead) for v, s in pairs]
    mpos = {p: i for i, p in enumerate(pairs)}
    f_l = np.array([mpos[k] for k in f_key], dtype=np.int64)
    o_l = np.array([mpos[k] for k in o_key], dtype=np.int64)

    dates = np.union1d(f_date, o_date)
    f_d = np.searchsorted(dates, f_date)
    o_d = np.searchsorted(dates, o_date)
    M = int(f_mem.max()) if f_mem.size else 2
    D, L = dates.size, len(margins)

    _reject_duplicates(forecast_path, f_d * (L * M) + f_l * M + (f_mem - 1), f_date)
    _reject_duplicates(observation_path, o_d * L + o_l, o_date)

    fc = np.full((D, L, M), np.nan)
    fc[f_d, f_l, f_mem - 1] = f_val
    obs = np.full((D, L), np.nan)
    obs[o_d, o_l] = o_val

    present = ~np.isnan(fc)
    partial = present.any(axis=2) & ~present.all(axis=2)
    if partial.any():
        d, l = np.argwhere(partial)[0]
        raise DataError(f"{forecast_path}: date {dates[d]}: margin {margins[l]} lacks members "
                        f"(expected {M})")
    archive = Archive(margins, dates, fc, obs)
    flagged = archive.partial_dates
    if flagged:
        log.warning("%d partial dates (some margins missing), first %s", len(flagged), flagged[0])
    return archive


def _reject_duplicates(path, keys, dates):
    uniq, first, counts = np.unique(keys, return_index=True, return_counts=True)
    if (counts > 1).any():
        dup = uniq[counts > 1][0]
        rows = np.flatnonzero(keys == dup)
        raise DataError(f"{path}: duplicate entry for date {dates[rows[0]]} (lines {rows[0] + 2} and {rows[1] + 2})")
