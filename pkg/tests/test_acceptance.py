"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
The scenario experiments (criteria 6 to 8) take several minutes.
"""
import datetime as dt
import itertools
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from empcop import (RankHistogram, StationGeometry, clark_window_dates,
                    crps_ensemble, derive_template, ecc_template, energy_score, gaussian_crps,
                    observation_template, random_schaake_dates, reorder, simschaake_dates,
                    variogram_score, vs_weights)
from empcop.core import ForecastCase, MarginId
from empcop.emos import C_MIN, PredictiveLaw, fit_gaussian_emos
from empcop.experiment import ExperimentConfig, run_experiment
from empcop.synth_io import ScenarioConfig, generate_scenario
from empcop.verify import prerank_to_rank, preranks

from conftest import DISTANCES, STATIONS
from test_emos import _grid_oracle, _recovery_data, crps_normal, quad_crps
from test_verify import es_brute, vs_brute

SCENARIO = {"stations": STATIONS, "distances_km": DISTANCES, "n_days": 1365,
            "spatial_corr_range": 100.0, "spread_factor": 0.5, "n_members": 50,
            "spread_variability": 0.5, "spread_skill": 0.5, "seed": 1}
EXPERIMENT = dict(archive={"scenario": SCENARIO}, training_days=50, test_days=1000,
                  n_randomized_runs=100, seed=7, bootstrap_resamples=1000)
RUN50 = ["raw", "individual", "ecc", "random_schaake", "simschaake"]
RUN80 = ["individual", "random_schaake", "simschaake"]


def report(k, ok, detail, capsys=None):
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    if capsys is None:
        print(line, flush=True)
    else:
        # bypass pytest capture so the line lands in the terminal log
        with capsys.disabled():
            print("\n" + line, flush=True)
    return ok


# -- 1. ECC fixed point ----------------------------------------------------------

def criterion_1():
    rng = np.random.default_rng(1)
    margins = tuple(MarginId("t2m", s) for s in STATIONS)
    cases = [rng.normal(size=(3, 50)) for _ in range(1000)]
    day0 = dt.date(2002, 1, 1)
    t = time.perf_counter()
    exact = 0
    for k, raw in enumerate(cases):
        fc = ForecastCase(day0, day0 + dt.timedelta(days=1), dict(zip(margins, map(tuple, raw))))
        out = reorder(np.sort(raw, axis=1), ecc_template(fc, k, margins), method="ecc").members
        exact += out.tobytes() == raw.tobytes()
    elapsed = time.perf_counter() - t
    return exact == 1000 and elapsed < 1.0, f"{exact}/1000 bitwise, {elapsed:.2f} s (limit 1 s)"


# -- 2. marginal preservation ----------------------------------------------------

def criterion_2():
    N = 10
    archive = generate_scenario(ScenarioConfig.from_dict(
        {"stations": STATIONS, "distances_km": DISTANCES, "n_days": 1461, "n_members": N, "seed": 5}))
    margins = archive.margins
    dates = archive.date_list[400:1400]
    rng = np.random.default_rng(2)
    worst_crps, multiset_ok = 0.0, True
    for k, date in enumerate(dates):
        fc = archive.forecast(date)
        y = archive.observations[archive.index(date)]
        samples = np.sort(rng.normal(size=(len(margins), N)), axis=1)
        pick = rng.choice(len(pool := clark_window_dates(archive, date)), N, replace=False)
        templates = {
            "individual": derive_template(rng.normal(size=(len(margins), N)), k, margins=margins),
            "ecc": ecc_template(fc, k, margins),
            "random_schaake": observation_template(
                archive, random_schaake_dates(archive, fc.init_date, N, k), margins, k),
            "clark_schaake": observation_template(archive, [pool[j] for j in pick], margins, k),
            "simschaake": observation_template(
                archive, [s.candidate_date for s in simschaake_dates(archive, fc, N, window_length=50)],
                margins, k),
        }
        crps = []
        for method, tpl in templates.items():
            out = reorder(samples, tpl, method=method).members
            multiset_ok &= bool(np.array_equal(np.sort(out, axis=1), samples))
            crps.append([crps_ensemble(out[l], y[l]) for l in range(len(margins))])
        crps = np.array(crps)
        worst_crps = max(worst_crps, float(np.abs(crps - crps[0]).max()))
    ok = multiset_ok and worst_crps <= 1e-12
    return ok, (f"5 methods x {len(dates)} cases, multisets {'equal' if multiset_ok else 'DIFFER'}, "
                f"max CRPS spread {worst_crps:.1e} (limit 1e-12)")


# -- 3. scores against oracles ---------------------------------------------------

def criterion_3():
    grid = itertools.product(np.linspace(-5, 5, 10), np.linspace(0.1, 5, 10), np.linspace(-8, 8, 10))
    err_quad = max(abs(gaussian_crps(PredictiveLaw(m, s), y) - quad_crps(m, s, y)) for m, s, y in grid)
    rng = np.random.default_rng(3)
    err_brute = 0.0
    for _ in range(100):
        n, L = rng.integers(2, 20), rng.integers(2, 6)
        x, y = rng.normal(size=(n, L)), rng.normal(size=L)
        w = rng.random((L, L))
        w = w + w.T
        np.fill_diagonal(w, 0)
        err_brute = max(err_brute, abs(energy_score(x, y) - es_brute(x, y)),
                        abs(variogram_score(x, y, w) - vs_brute(x, y, w)),
                        *(abs(crps_ensemble(x[:, l], y[l]) - es_brute(x[:, [l]], y[[l]])) for l in range(L)))
    margins = [MarginId("t2m", s) for s in ("vienna", "bratislava", "budapest")]
    w = vs_weights(StationGeometry.from_matrix(STATIONS, DISTANCES), margins)
    wsum = w[~np.eye(3, dtype=bool)].sum()
    ok = err_quad <= 1e-6 and err_brute <= 1e-10 and abs(wsum - 1) <= 1e-12 and abs(w[0, 1] - 0.326319) <= 1e-5
    return ok, (f"quad err {err_quad:.1e}, brute err {err_brute:.1e}, weight sum - 1 = {wsum - 1:.1e}, "
                f"w(vienna, bratislava) = {w[0, 1]:.6f}")


# -- 4. rank uniformity ----------------------------------------------------------

def criterion_4():
    N, L, B = 50, 3, 100_000
    t = time.perf_counter()
    passed = {k: 0 for k in ("multivariate", "band_depth", "average")}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pools = rng.normal(size=(B, N + 1, L))
        for kind, pre in preranks(pools).items():
            ranks = prerank_to_rank(pre, rng.random(B))
            passed[kind] += RankHistogram.from_ranks(kind, ranks, N).chi2()[2] > 0.01
    elapsed = time.perf_counter() - t
    ok = all(v >= 19 for v in passed.values()) and elapsed < 120
    return ok, f"seeds with p > 0.01: {passed} (need >= 19/20), {elapsed:.0f} s (limit 120 s)"


# -- 5. EMOS recovery ------------------------------------------------------------

def criterion_5():
    xbar, s2, y = _recovery_data()
    m = fit_gaussian_emos(xbar, s2, y)
    var = m.variance(s2.mean())
    oracle = _grid_oracle(xbar, s2, y, (3, 7), (0.8, 1.2), (C_MIN, 8), (0, 4))[0]
    fit_crps = crps_normal(m.a + m.b * xbar, np.sqrt(m.variance(s2)), y).mean()
    gap = abs(fit_crps - oracle) / oracle
    ok = abs(m.a - 5) <= 0.05 and abs(m.b - 1) <= 0.05 and abs(var - 4) <= 0.4 and gap <= 0.01
    return ok, (f"a = {m.a:.4f} (|a - 5| = {abs(m.a - 5):.3f} <= 0.05), b = {m.b:.4f}, "
                f"variance = {var:.3f}, CRPS {fit_crps:.5f} vs grid {oracle:.5f} ({gap:.2%})")


# -- 6 to 8. scenario experiments ------------------------------------------------

def _interval(result, a, b, score):
    for r in result.bootstrap:
        if {r["method_a"], r["method_b"]} == {a, b} and r["score"] == score:
            sign = 1 if r["method_a"] == a else -1
            lo, hi = sorted((sign * r["lower"], sign * r["upper"]))
            return sign * r["mean_diff"], lo, hi
    raise KeyError((a, b, score))


def run_scenarios(out_dir=None):
    t = time.perf_counter()
    r50 = run_experiment(ExperimentConfig(methods=RUN50, n_members=50, **EXPERIMENT), out_dir)
    r80 = run_experiment(ExperimentConfig(methods=RUN80, n_members=80, **EXPERIMENT))
    return r50, r80, time.perf_counter() - t


def criterion_6(r50, r80, seconds):
    ok, parts = seconds < 600, []
    for N, res in ((50, r50), (80, r80)):
        rep = res.reports
        for other in ("random_schaake", "individual"):
            d, lo, hi = _interval(res, "simschaake", other, "vs")
            es_ok = rep["simschaake"].mean_es <= rep[other].mean_es
            ok &= hi < 0 and es_ok
            parts.append(f"N={N} VS sim-{other} {d:+.4f} [{lo:+.4f}, {hi:+.4f}], "
                         f"ES {rep['simschaake'].mean_es:.4f} vs {rep[other].mean_es:.4f}")
    return ok, "; ".join(parts) + f"; {seconds:.0f} s (limit 600 s)"


def _u_ratio(h):
    counts, widths = h.rebin(10)
    return (counts[0] + counts[-1]) / (h.cases * (widths[0] + widths[-1]) / h.n_bins)


def criterion_7(r50):
    ind, sim = r50.reports["individual"].histograms["band_depth"], r50.reports["simschaake"].histograms["band_depth"]
    u, c_ind, c_sim = _u_ratio(ind), ind.chi2()[0], sim.chi2()[0]
    return u > 1.3 and c_sim < c_ind, (f"individual outer-decile ratio {u:.2f} (need > 1.3), "
                                       f"band-depth chi2 simschaake {c_sim:.1f} < individual {c_ind:.1f}")


def criterion_8(r50, out1, out2):
    run_experiment(ExperimentConfig(methods=RUN50, n_members=50, **EXPERIMENT), out2, threads=2)
    a, b = (Path(o, "scores.csv").read_bytes() for o in (out1, out2))
    return a == b, f"scores.csv {'byte-identical' if a == b else 'DIFFERS'} for threads 1 and 2 ({len(a)} bytes)"


# -- pytest entry points -----------------------------------------------------------

@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_standalone_criteria(k, capsys):
    ok, detail = globals()[f"criterion_{k}"]()
    assert report(k, ok, detail, capsys), detail


@pytest.fixture(scope="module")
def scenarios(tmp_path_factory):
    out = tmp_path_factory.mktemp("threads1")
    return (*run_scenarios(out), out)


def test_criterion_6(scenarios, capsys):
    r50, r80, seconds, _ = scenarios
    ok, detail = criterion_6(r50, r80, seconds)
    assert report(6, ok, detail, capsys), detail


def test_criterion_7(scenarios, capsys):
    ok, detail = criterion_7(scenarios[0])
    assert report(7, ok, detail, capsys), detail


def test_criterion_8(scenarios, tmp_path, capsys):
    ok, detail = criterion_8(scenarios[0], scenarios[3], tmp_path / "threads2")
    assert report(8, ok, detail, capsys), detail


if __name__ == "__main__":
    import tempfile

    results = [report(k, *globals()[f"criterion_{k}"]()) for k in range(1, 6)]
    with tempfile.TemporaryDirectory() as tmp:
        r50, r80, seconds = run_scenarios(Path(tmp, "a"))
        results.append(report(6, *criterion_6(r50, r80, seconds)))
        results.append(report(7, *criterion_7(r50)))
        results.append(report(8, *criterion_8(r50, Path(tmp, "a"), Path(tmp, "b"))))
    sys.exit(0 if all(results) else 1)
