"""End-to-end postprocessing experiment over a test period.

For every test day: fit EMOS per margin on the rolling window, take N
equidistant quantiles per margin, build each method's dependence template,
reorder, and score the result against the observation. Randomized methods
(``individual``, ``random_schaake``) are averaged over independent runs.

Seeds are derived from the master seed with ``SeedSequence`` spawn keys
``(date ordinal, method code, run, purpose)``, so adding or removing a
method never changes another method's numbers.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import itertools
import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _accel, _kernels
from .archive import Archive, to_date
from .core import DataError, InfeasibleError, RankTemplate, derive_template, reorder
from .emos import EmosModel, PredictiveLaw, ensemble_moments, fit_emos, sample_equidistant
from .synth_io import ScenarioConfig, generate_scenario, load_archive, load_archive_files, write_archive
from .templates import (MarginStandardizer, clark_window_dates, ecc_template, observation_template,
                        random_schaake_dates, simschaake_dates)
from .verify import RANK_KINDS, StationGeometry, VerificationReport, aggregate, rank_batch, vs_weights

log = logging.getLogger(__name__)

METHODS = ("raw", "individual", "ecc", "random_schaake", "clark_schaake", "simschaake")
METHOD_CODE = {m: i for i, m in enumerate(METHODS)}
RANDOMIZED = ("individual", "random_schaake")
PURPOSE = {"template": 0, "dates": 1, "ranks": 2}
BOOTSTRAP_KEY = 0xB007


class ConfigError(ValueError):
    """The experiment configuration is invalid or infeasible."""


@dataclass
class ExperimentConfig:
    archive: dict
    methods: list = field(default_factory=lambda: ["individual", "ecc", "random_schaake", "simschaake"])
    n_members: int = 50
    training_days: int = 50
    test_start: dt.date | None = None
    test_end: dt.date | None = None
    test_days: int | None = None
    n_randomized_runs: int = 100
    geometry: dict | None = None
    seed: int = 0
    standardize: bool = False
    clark_window_days: int = 7
    bootstrap_resamples: int = 1000
    emos_warm_start: bool = False
    write_ensembles: bool = False

    def __post_init__(self):
        if not isinstance(self.archive, dict) or not (
                {"scenario"} <= set(self.archive) or {"path"} <= set(self.archive)
                or {"forecasts", "observations"} <= set(self.archive)):
            raise ConfigError("archive must give 'scenario', 'path', or 'forecasts' + 'observations'")
        self.methods = list(self.methods)
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate methods")
        if self.n_members < 1 or self.training_days < 1 or self.n_randomized_runs < 1:
            raise ConfigError("n_members, training_days and n_randomized_runs must be positive")
        if self.bootstrap_resamples < 0:
            raise ConfigError("bootstrap_resamples must be nonnegative")
        self.test_start = to_date(self.test_start) if self.test_start else None
        self.test_end = to_date(self.test_end) if self.test_end else None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("test_start", "test_end"):
            out[k] = out[k].isoformat() if out[k] else None
        return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    dates: list
    margins: tuple
    reports: dict
    daily: dict
    bootstrap: list
    skipped: dict
    models: dict = field(repr=False, default_factory=dict)


def derive_seed(master: int, date: dt.date, method: str, run: int, purpose: str) -> np.random.SeedSequence:
    """Child seed for one (case, method, run, purpose) cell."""
    return np.random.SeedSequence(
        master, spawn_key=(to_date(date).toordinal(), METHOD_CODE[method], run, PURPOSE[purpose]))


def load_config_archive(config: ExperimentConfig, base: Path | None = None):
    """Return (archive, geometry) for the configured source."""
    src = config.archive
    base = base or Path(".")
    scenario = None
    if "scenario" in src:
        try:
            scenario = ScenarioConfig.from_dict(src["scenario"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario: {exc}") from None
        archive = generate_scenario(scenario)
    elif "path" in src:
        archive = load_archive(base / src["path"], src.get("format", "csv"))
    else:
        archive = load_archive_files(base / src["forecasts"], base / src["observations"])
    if config.geometry is not None:
        geometry = StationGeometry.from_pairs({tuple(k.split("|")): v for k, v in config.geometry.items()})
    elif scenario is not None:
        geometry = scenario.geometry()
    else:
        raise ConfigError("geometry is required for file-based archives")
    return archive, geometry


def select_test_dates(archive: Archive, config: ExperimentConfig) -> list[dt.date]:
    dates = archive.dates
    mask = np.ones(dates.size, dtype=bool)
    if config.test_start:
        mask &= dates >= np.datetime64(config.test_start, "D")
    if config.test_end:
        mask &= dates <= np.datetime64(config.test_end, "D")
    sel = dates[mask]
    if config.test_days is not None:
        sel = sel[-config.test_days:]
    return list(sel.astype(object))


def _check_config(config: ExperimentConfig, archive: Archive):
    if "ecc" in config.methods and config.n_members != archive.n_members:
        raise ConfigError(f"ecc requires N = M, got N={config.n_members}, M={archive.n_members}")
    if len(archive.margins) < 2:
        raise ConfigError("a multivariate experiment needs at least two margins")


# -- stage 1: marginal postprocessing ------------------------------------------

def fit_all_emos(archive: Archive, dates, config: ExperimentConfig, threads: int = 1):
    """EMOS models per (date, margin); None where training data is insufficient."""
    L = len(archive.margins)
    if config.emos_warm_start:
        out = {d: [None] * L for d in dates}
        for l, m in enumerate(archive.margins):
            prev = None
            for d in dates:
                try:
                    prev = out[d][l] = fit_emos(archive, m, d, config.training_days, warm_start=prev)
                except InfeasibleError:
                    prev = None
        return out

    def fit_day(d):
        models = []
        for m in archive.margins:
            try:
                models.append(fit_emos(archive, m, d, config.training_days))
            except InfeasibleError:
                models.append(None)
        return models

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return dict(zip(dates, pool.map(fit_day, dates)))


def marginal_samples(models, members: np.ndarray, n: int) -> np.ndarray:
    """Sorted equidistant quantiles, shape ``(L, n)``."""
    mean, var = ensemble_moments(members)
    rows = []
    for model, mu, v in zip(models, mean, var):
        law = PredictiveLaw(model.a + model.b * float(mu), float(np.sqrt(model.variance(v))))
        rows.append(sample_equidistant(law, n))
    return np.array(rows)


# -- stage 2: templates, reordering, scoring ---------------------------------

class _DayRunner:
    def __init__(self, archive, config, geometry, models):
        self.archive = archive
        self.config = config
        self.models = models
        self.weights = vs_weights(geometry, archive.margins)
        self.margins = archive.margins

    def feasibility(self, date):
        """Reason string when the day cannot be scored by every method, else None."""
        a, c = self.archive, self.config
        i = a.index(date)
        if i is None or not a.complete[i]:
            return "incomplete forecast or observation"
        if any(m is None for m in self.models.get(date, [None])):
            return "insufficient EMOS training data"
        t0 = a.init_date(date)
        D = a.n_eligible(t0)
        needs_pool = {"random_schaake", "simschaake"} & set(c.methods)
        if needs_pool and D < max(c.n_members, c.training_days):
            return f"D={D} < max(N, Lambda)"
        if "clark_schaake" in c.methods and len(clark_window_dates(a, date, c.clark_window_days)) < c.n_members:
            return "too few Clark window dates"
        return None

    def _template(self, method, date, forecast, run):
        a, c = self.archive, self.config
        seed = derive_seed(c.seed, date, method, run, "template")
        N = c.n_members
        if method == "individual":
            rng = np.random.default_rng(seed)
            perms = np.array([rng.permutation(N) + 1 for _ in self.margins])
            return RankTemplate(self.margins, perms, "custom")
        if method == "ecc":
            return ecc_template(forecast, seed, self.margins)
        dseed = derive_seed(c.seed, date, method, run, "dates")
        if method == "random_schaake":
            dates = random_schaake_dates(a, forecast.init_date, N, dseed)
        elif method == "clark_schaake":
            pool = clark_window_dates(a, date, c.clark_window_days)
            pick = np.random.default_rng(dseed).choice(len(pool), size=N, replace=False)
            dates = [pool[k] for k in pick]
        elif method == "simschaake":
            std = MarginStandardizer.fit(a, forecast.init_date) if c.standardize else None
            scores = simschaake_dates(a, forecast, N, std, window_length=c.training_days)
            dates = [s.candidate_date for s in scores]
        else:  # pragma: no cover
            raise ValueError(method)
        return observation_template(a, dates, self.margins, seed, source=method)

    def run(self, date):
        a, c = self.archive, self.config
        i = a.index(date)
        forecast = a.forecast(date)
        raw = a.forecasts[i]
        y = a.observations[i]
        samples = marginal_samples(self.models[date], raw, c.n_members)
        out = {}
        for method in c.methods:
            if method == "raw":
                ens = raw.T[None]
            else:
                runs = c.n_randomized_runs if method in RANDOMIZED else 1
                ens = np.empty((runs, c.n_members, len(self.margins)))
                for r in range(runs):
                    tpl = self._template(method, date, forecast, r)
                    ens[r] = reorder(samples, tpl, method=method).members.T
            es = _kernels.energy_score_batch(ens, y)
            vs = _kernels.variogram_score_batch(ens, y, self.weights)
            crps = _kernels.crps_margins_batch(ens, y)
            ranks = {k: int(rank_batch(k, ens[:1], y[None], derive_seed(c.seed, date, method, 0, "ranks"))[0])
                     for k in RANK_KINDS}
            out[method] = {"es": float(es.mean()), "vs": float(vs.mean()), "crps": crps.mean(axis=0),
                           "ranks": ranks, "members": ens[0]}
        return out


def paired_bootstrap(daily: dict, methods, n_resamples: int, master_seed: int, level: float = 0.95):
    """Percentile intervals for mean score differences between method pairs."""
    if n_resamples == 0:
        return []
    n = len(next(iter(daily.values()))["es"])
    rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(BOOTSTRAP_KEY,)))
    idx = rng.integers(0, n, size=(n_resamples, n))
    q = [(1 - level) / 2 * 100, (1 + level) / 2 * 100]
    rows = []
    for a, b in itertools.combinations(methods, 2):
        for score in ("es", "vs"):
            diff = np.asarray(daily[a][score]) - np.asarray(daily[b][score])
            boots = diff[idx].mean(axis=1)
            lo, hi = np.percentile(boots, q)
            rows.append({"method_a": a, "method_b": b, "score": score, "mean_diff": float(diff.mean()),
                         "lower": float(lo), "upper": float(hi)})
    return rows


def run_experiment(config: ExperimentConfig, out_dir=None, threads: int = 1, base: Path | None = None,
                   archive: Archive | None = None, geometry: StationGeometry | None = None) -> ExperimentResult:
    """Run the configured experiment; write outputs when ``out_dir`` is given."""
    if archive is None:
        archive, geometry = load_config_archive(config, base)
    elif geometry is None:
        raise ConfigError("geometry is required with an explicit archive")
    _check_config(config, archive)
    dates = select_test_dates(archive, config)
    if not dates:
        raise ConfigError("empty test period")

    models = fit_all_emos(archive, dates, config, threads)
    runner = _DayRunner(archive, config, geometry, models)
    reasons = {d: runner.feasibility(d) for d in dates}
    skipped = {d: r for d, r in reasons.items() if r is not None}
    scored = [d for d in dates if reasons[d] is None]
    if skipped:
        log.info("skipping %d of %d test days (first: %s, %s)", len(skipped), len(dates),
                 next(iter(skipped)), next(iter(skipped.values())))
    if not scored:
        raise InfeasibleError("no test day is feasible for every configured method")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        per_day = list(pool.map(runner.run, scored))

    daily, reports = {}, {}
    for method in config.methods:
        rows = [d[method] for d in per_day]
        daily[method] = {
            "es": np.array([r["es"] for r in rows]),
            "vs": np.array([r["vs"] for r in rows]),
            "crps": np.array([r["crps"] for r in rows]),
            "ranks": {k: np.array([r["ranks"][k] for r in rows]) for k in RANK_KINDS},
            "members": np.array([r["members"] for r in rows]),
        }
        n_mem = archive.n_members if method == "raw" else config.n_members
        reports[method] = aggregate(method, daily[method]["es"], daily[method]["vs"], daily[method]["crps"],
                                    daily[method]["ranks"], n_mem, [str(m) for m in archive.margins])
    boot = paired_bootstrap(daily, config.methods, config.bootstrap_resamples, config.seed)
    result = ExperimentResult(config, scored, archive.margins, reports, daily, boot, skipped, models)
    if out_dir is not None:
        write_outputs(result, archive, Path(out_dir))
    return result


# -- output files ----------------------------------------------------------------

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def scores_csv(reports: dict, margins) -> str:
    header = ["method", "cases", "es", "vs"] + [f"crps_{m.station}" for m in margins]
    rows = [[m, r.cases, repr(r.mean_es), repr(r.mean_vs)] + [repr(v) for v in r.mean_crps.values()]
            for m, r in reports.items()]
    return _csv_text(header, rows)


def write_report_files(reports: dict, margins, out: Path, n_bins: int = 10) -> list[str]:
    """scores.csv, rank histograms and calibration summary; returns file names."""
    out.mkdir(parents=True, exist_ok=True)
    files = {"scores.csv": scores_csv(reports, margins)}
    cal_rows = []
    for method, rep in reports.items():
        for kind, h in rep.histograms.items():
            files[f"ranks_{kind}_{method}.csv"] = _csv_text(
                ["bin", "count"], [[b + 1, int(c)] for b, c in enumerate(h.counts)])
            counts, widths = h.rebin(n_bins)
            first = np.concatenate([[1], np.cumsum(widths)[:-1] + 1])
            files[f"ranks{n_bins}_{kind}_{method}.csv"] = _csv_text(
                ["bin", "first_rank", "last_rank", "count"],
                [[b + 1, int(f), int(f + w - 1), int(c)] for b, (f, w, c) in enumerate(zip(first, widths, counts))])
            stat, df, p = h.chi2()
            cal_rows.append([method, kind, h.cases, repr(stat), df, repr(p)])
    files["calibration.csv"] = _csv_text(["method", "kind", "cases", "chi2", "df", "p_value"], cal_rows)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    return sorted(files)


def write_outputs(result: ExperimentResult, archive: Archive, out: Path):
    files = write_report_files(result.reports, result.margins, out)
    cfg = result.config

    daily_rows = []
    for k, d in enumerate(result.dates):
        for m in cfg.methods:
            daily_rows.append([d.isoformat(), m, repr(float(result.daily[m]["es"][k])),
                               repr(float(result.daily[m]["vs"][k]))])
    (out / "daily_scores.csv").write_text(_csv_text(["date", "method", "es", "vs"], daily_rows), encoding="utf-8")
    (out / "bootstrap.csv").write_text(_csv_text(
        ["method_a", "method_b", "score", "mean_diff", "lower", "upper"],
        [[r["method_a"], r["method_b"], r["score"], repr(r["mean_diff"]), repr(r["lower"]), repr(r["upper"])]
         for r in result.bootstrap]), encoding="utf-8")

    emos_rows = []
    for d in result.dates:
        for m, model in zip(result.margins, result.models[d]):
            emos_rows.append([d.isoformat(), m.variable, m.station, m.lead_time, repr(model.a), repr(model.b),
                              repr(model.c), repr(model.d), repr(model.mean_crps), int(model.converged)])
    (out / "emos_models.csv").write_text(_csv_text(
        ["date", "variable", "station", "lead_hours", "a", "b", "c", "d", "mean_crps", "converged"], emos_rows),
        encoding="utf-8")

    if cfg.write_ensembles:
        idx = [archive.index(d) for d in result.dates]
        for m in cfg.methods:
            members = np.transpose(result.daily[m]["members"], (0, 2, 1))
            ens = Archive(archive.margins, result.dates, members, archive.observations[idx])
            write_archive(ens, out / "ensembles" / m)

    manifest = {
        "config": cfg.to_dict(),
        "package_version": __version__,
        "backend": _accel.backend_name(),
        "versions": _versions(),
        "seed_scheme": "SeedSequence(master, spawn_key=(date.toordinal(), method_code, run, purpose))",
        "method_codes": METHOD_CODE,
        "purpose_codes": PURPOSE,
        "emos": {"form": "N(a + b*mean, c + d*var), var with M-1 denominator",
                 "c_min": 1e-4, "optimizer": "Nelder-Mead on (a, b, sqrt(c - c_min), sqrt(d))",
                 "warm_start": cfg.emos_warm_start, "models_file": "emos_models.csv"},
        "test_days": len(result.dates) + len(result.skipped),
        "scored_days": len(result.dates),
        "skipped_days": {d.isoformat(): r for d, r in result.skipped.items()},
        "files": sorted(files + ["daily_scores.csv", "bootstrap.csv", "emos_models.csv"]),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _versions():
    import numpy
    import scipy

    out = {"python": platform.python_version(), "numpy": numpy.__version__, "scipy": scipy.__version__}
    if _accel.HAVE_NUMBA:
        out["numba"] = _accel.numba.__version__
    return out


def verify_ensemble_archive(archive: Archive, geometry: StationGeometry, method: str = "ensemble",
                            seed: int = 0, dates=None) -> VerificationReport:
    """Score an archive's own forecasts against its observations on complete dates."""
    mask = archive.complete
    if dates is not None:
        wanted = np.array([np.datetime64(to_date(d), "D") for d in dates])
        mask &= np.isin(archive.dates, wanted)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise InfeasibleError("no complete dates to verify")
    ens = np.transpose(archive.forecasts[idx], (0, 2, 1))
    y = archive.observations[idx]
    w = vs_weights(geometry, archive.margins)
    es = np.array([_kernels.energy_score_batch(e[None], o)[0] for e, o in zip(ens, y)])
    vs = np.array([_kernels.variogram_score_batch(e[None], o, w)[0] for e, o in zip(ens, y)])
    crps = np.array([_kernels.crps_margins_batch(e[None], o)[0] for e, o in zip(ens, y)])
    ranks = {}
    for kind in RANK_KINDS:
        ranks[kind] = np.array([
            rank_batch(kind, e[None], o[None], np.random.SeedSequence(seed, spawn_key=(d.toordinal(), 0, 0, 2)))[0]
            for e, o, d in zip(ens, y, archive.dates[idx].astype(object))])
    return aggregate(method, es, vs, crps, ranks, archive.n_members, [str(m) for m in archive.margins])
