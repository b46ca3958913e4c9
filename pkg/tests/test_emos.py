import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from empcop import (DataError, EmosModel, ForecastCase, InfeasibleError, MarginId, PredictiveLaw,
                    crps_ensemble, fit_emos, gaussian_crps, predictive_law, sample_equidistant)
from empcop.archive import Archive
from empcop.emos import C_MIN, fit_gaussian_emos, training_dates

from conftest import day

M0 = MarginId("t2m", "a")


def quad_crps(mu, sigma, y):
    f = lambda t: (stats.norm.cdf(t, mu, sigma) - (t >= y)) ** 2
    lo = integrate.quad(f, -np.inf, y, epsabs=1e-12, limit=200)[0]
    hi = integrate.quad(f, y, np.inf, epsabs=1e-12, limit=200)[0]
    return lo + hi


def crps_normal(mu, sigma, y):
    z = (y - mu) / sigma
    return sigma * (z * (2 * stats.norm.cdf(z) - 1) + 2 * stats.norm.pdf(z) - 1 / np.sqrt(np.pi))


# -- gaussian_crps ------------------------------------------------------------

def test_crps_standard_normal_at_zero():
    # value from numeric integration, frozen
    assert gaussian_crps(PredictiveLaw(0.0, 1.0), 0.0) == pytest.approx(0.23369497725510913, abs=1e-12)


@pytest.mark.parametrize("mu,sigma,y", [(0, 1, 0), (2, 0.5, 3.1), (-4, 3, 5), (10, 0.1, 9.95), (0, 2, -7)])
def test_crps_matches_quadrature(mu, sigma, y):
    assert gaussian_crps(PredictiveLaw(mu, sigma), y) == pytest.approx(quad_crps(mu, sigma, y), abs=1e-6)


def test_crps_point_mass_limit():
    assert gaussian_crps(PredictiveLaw(1.0, 1e-8), 3.5) == pytest.approx(2.5, abs=1e-6)


@given(st.floats(-50, 50), st.floats(0.01, 20), st.floats(-50, 50), st.floats(-100, 100))
def test_crps_nonnegative_and_translation_invariant(mu, sigma, y, shift):
    c = gaussian_crps(PredictiveLaw(mu, sigma), y)
    assert c >= 0
    assert gaussian_crps(PredictiveLaw(mu + shift, sigma), y + shift) == pytest.approx(c, rel=1e-9, abs=1e-9)


def test_crps_vectorized():
    ys = np.array([-1.0, 0.0, 2.0])
    law = PredictiveLaw(0.5, 1.5)
    np.testing.assert_allclose(gaussian_crps(law, ys), [gaussian_crps(law, y) for y in ys])


# -- sample_equidistant -------------------------------------------------------

def test_equidistant_examples():
    assert sample_equidistant(PredictiveLaw(0, 1), 1).tolist() == [0.0]
    np.testing.assert_allclose(sample_equidistant(PredictiveLaw(0, 1), 3), [-0.67449, 0, 0.67449], atol=1e-4)
    np.testing.assert_allclose(sample_equidistant(PredictiveLaw(10, 2), 3),
                               10 + 2 * sample_equidistant(PredictiveLaw(0, 1), 3), atol=1e-12)
    with pytest.raises(ValueError):
        sample_equidistant(PredictiveLaw(0, 1), 0)


@given(st.floats(-100, 100), st.floats(0.01, 50), st.integers(2, 200))
def test_equidistant_increasing_and_equivariant(mu, sigma, n):
    q = sample_equidistant(PredictiveLaw(mu, sigma), n)
    assert (np.diff(q) > 0).all()
    std = sample_equidistant(PredictiveLaw(0, 1), n)
    np.testing.assert_allclose(q, mu + sigma * std, rtol=1e-12, atol=1e-9)


# -- predictive_law -----------------------------------------------------------

def _fc(values):
    return ForecastCase(day("2002-01-01"), day("2002-01-02"), {M0: tuple(values)})


def test_predictive_law_examples():
    law = predictive_law(EmosModel(M0, 0, 1, 1, 0), _fc([1, 3]))
    assert (law.mu, law.sigma) == (2.0, 1.0)
    law = predictive_law(EmosModel(M0, 2, 0, 0.25, 0), _fc([7, -3, 11]))
    assert (law.mu, law.sigma) == (2.0, 0.5)
    law = predictive_law(EmosModel(M0, 0, 1, 0, 1), _fc([0, 2]))
    assert law.mu == 1.0 and law.sigma == pytest.approx(math.sqrt(2), abs=1e-15)


def test_predictive_law_errors():
    with pytest.raises(DataError):
        predictive_law(EmosModel(MarginId("t2m", "b"), 0, 1, 1, 0), _fc([1, 2]))
    with pytest.raises(ValueError):
        EmosModel(M0, 0, 1, -1, 0)
    with pytest.raises(ValueError):
        PredictiveLaw(0, 0)


# -- fitting ------------------------------------------------------------------

def _grid_oracle(xbar, s2, y, a_rng, b_rng, c_rng, d_rng, n=13, rounds=4):
    """Iteratively refined full grid search on mean CRPS."""
    ranges = [a_rng, b_rng, c_rng, d_rng]
    best = None
    for _ in range(rounds):
        axes = [np.linspace(lo, hi, n) for lo, hi in ranges]
        A, B, C, D = (g.ravel() for g in np.meshgrid(*axes, indexing="ij"))
        scores = np.empty(A.size)
        for k in range(0, A.size, 2000):
            sl = slice(k, k + 2000)
            mu = A[sl, None] + B[sl, None] * xbar[None]
            sig = np.sqrt(C[sl, None] + D[sl, None] * s2[None])
            scores[sl] = crps_normal(mu, sig, y[None]).mean(axis=1)
        i = int(np.argmin(scores))
        best = (scores[i], A[i], B[i], C[i], D[i])
        steps = [(hi - lo) / (n - 1) for lo, hi in ranges]
        ranges = [(max(v - 2 * h, lo if j >= 2 else -np.inf), v + 2 * h)
                  for j, (v, h, (lo, _)) in enumerate(zip(best[1:], steps, ranges))]
    return best


def _recovery_data(seed=0, n=2000):
    rng = np.random.default_rng(seed)
    xbar = rng.normal(0, 4, n)
    s2 = rng.gamma(4, 0.25, n)
    y = 5 + xbar + rng.normal(0, 2, n)
    return xbar, s2, y


def test_recovery_and_grid_oracle():
    xbar, s2, y = _recovery_data()
    m = fit_gaussian_emos(xbar, s2, y)
    assert abs(m.a - 5) <= 0.05 * 5
    assert abs(m.b - 1) < 0.05
    assert m.variance(s2.mean()) == pytest.approx(4, rel=0.10)
    oracle = _grid_oracle(xbar, s2, y, (3, 7), (0.8, 1.2), (C_MIN, 8), (0, 4))
    assert m.mean_crps <= oracle[0] * 1.01
    assert m.mean_crps == pytest.approx(crps_normal(m.a + m.b * xbar, np.sqrt(m.variance(s2)), y).mean(),
                                        rel=1e-12)


def test_exact_forecast_collapses_variance():
    rng = np.random.default_rng(1)
    xbar = rng.normal(0, 3, 200)
    s2 = np.full(200, 1.0)
    m = fit_gaussian_emos(xbar, s2, xbar.copy())
    assert abs(m.a) < 1e-3 and abs(m.b - 1) < 1e-3
    assert m.variance(1.0) < 1e-3
    assert m.c >= C_MIN


def test_fixed_b_constant_obs():
    rng = np.random.default_rng(2)
    xbar = rng.normal(0, 3, 100)
    m = fit_gaussian_emos(xbar, rng.gamma(2, 1, 100), np.full(100, 3.0), fixed_b=0.0)
    assert m.b == 0.0
    assert m.a == pytest.approx(3.0, abs=1e-3)


def test_warm_start_not_worse():
    xbar, s2, y = _recovery_data(3, 50)
    cold = fit_gaussian_emos(xbar, s2, y)
    warm = fit_gaussian_emos(xbar, s2, y, warm_start=EmosModel(M0, 0.0, 0.5, 2.0, 0.1))
    assert warm.mean_crps <= cold.mean_crps + 1e-12


def test_fit_rejects_bad_input():
    with pytest.raises(DataError):
        fit_gaussian_emos([1.0, np.nan], [1.0, 1.0], [1.0, 2.0])
    with pytest.raises(DataError):
        fit_gaussian_emos([], [], [])


# -- training windows on an archive ------------------------------------------

def test_training_window_skips_missing(small_archive):
    m = small_archive.margins[0]
    vdate = small_archive.date_list[120]
    obs = small_archive.observations.copy()
    obs[119, 0] = np.nan
    a = Archive(small_archive.margins, small_archive.dates, small_archive.forecasts, obs)
    dates = training_dates(a, m, vdate, 50)
    assert len(dates) == 50
    assert small_archive.date_list[119] not in dates
    assert dates[0] == small_archive.date_list[69]
    assert max(dates) < vdate


def test_training_window_infeasible(small_archive):
    with pytest.raises(InfeasibleError):
        fit_emos(small_archive, small_archive.margins[0], small_archive.date_list[30], 50)


def test_fit_emos_variance_floor_and_propriety(small_archive):
    """Fitted models beat the raw ensemble in-sample in >= 90% of windows."""
    better = 0
    dates = small_archive.date_list[60::10]
    for vdate in dates:
        for l, m in enumerate(small_archive.margins):
            model = fit_emos(small_archive, m, vdate, 50)
            idx = [small_archive.index(d) for d in model.training_window]
            ens = small_archive.forecasts[idx, l, :]
            y = small_archive.observations[idx, l]
            var = model.variance(ens.var(axis=1, ddof=1))
            assert (var >= C_MIN).all()
            raw = np.mean([crps_ensemble(e, o) for e, o in zip(ens, y)])
            better += model.mean_crps <= raw
    assert better >= 0.9 * len(dates) * len(small_archive.margins)
