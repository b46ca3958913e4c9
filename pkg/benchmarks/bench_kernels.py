"""Time the numba kernels against their numpy fallbacks.

Usage: ``python benchmarks/bench_kernels.py [--repeat 3]``

Both flavours are called directly, so the backend flag does not matter
here. The numba timings exclude compilation (one warm-up call each).
"""
import argparse
import timeit

import numpy as np

from empcop import _accel, _kernels as K


def workloads(rng):
    ens = rng.normal(size=(100, 50, 3))
    y = rng.normal(size=3)
    w = np.array([[0, 0.33, 0.08], [0.33, 0, 0.09], [0.08, 0.09, 0]])
    pools = rng.normal(size=(20_000, 51, 3))
    xbar, s2 = rng.normal(0, 4, 50), rng.gamma(4, 0.25, 50)
    yo = 5 + xbar + rng.normal(0, 2, 50)
    theta = np.array([0.0, 1.0, 1.0, 1.0])
    free = np.arange(4)
    return {
        "energy score, 100 x (50, 3)": ("energy_score", (ens, y)),
        "variogram score, 100 x (50, 3)": ("variogram_score", (ens, y, w)),
        "CRPS per margin, 100 x (50, 3)": ("crps_margins", (ens, y)),
        "dominance pre-ranks, 20k pools": ("dominance_prerank", (pools,)),
        "coordinate ranks, 20k pools": ("coordinate_ranks", (pools,)),
        "EMOS objective, 50 cases": ("emos_objective", (theta, xbar, s2, yo, 1e-4)),
        "EMOS Nelder-Mead fit, 50 cases": ("nelder_mead_emos", (theta, free, xbar, s2, yo, 1e-4, 1e-8, 2000)),
    }


def best_time(func, args, repeat):
    n = max(1, int(0.2 / max(timeit.timeit(lambda: func(*args), number=1), 1e-6)))
    return min(timeit.repeat(lambda: func(*args), number=n, repeat=repeat)) / n


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'numba':>11s} {'numpy':>11s} {'speedup':>8s}")
    for label, (name, kargs) in workloads(rng).items():
        nb, np_ = getattr(K, f"_{name}_nb"), getattr(K, f"_{name}_np")
        nb(*kargs)  # compile
        t_nb, t_np = best_time(nb, kargs, args.repeat), best_time(np_, kargs, args.repeat)
        print(f"{label:34s} {t_nb * 1e3:9.3f}ms {t_np * 1e3:9.3f}ms {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
