"""Hot numeric kernels, each in a numba flavour and a numpy flavour.

The public wrappers at the bottom dispatch on :data:`empcop._accel.USE_NUMBA`.
Batched layouts are used throughout:

* ensembles: ``(R, N, L)`` -- R ensembles of N members over L margins
* pools for rank statistics: ``(B, P, L)`` with the observation at ``[:, 0]``
  and the P - 1 members after it
"""
import math

import numpy as np
from scipy import optimize, special

from . import _accel
from ._accel import njit

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INV_SQRT_2 = 1.0 / math.sqrt(2.0)

# Nelder-Mead coefficients (reflection, expansion, contraction, shrink)
_RHO, _CHI, _PSI, _SIGMA = 1.0, 2.0, 0.5, 0.5


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------

@njit
def _energy_score_nb(x, y):
    R, N, L = x.shape
    out = np.empty(R)
    for r in range(R):
        t1 = 0.0
        for n in range(N):
            acc = 0.0
            for k in range(L):
                d = x[r, n, k] - y[k]
                acc += d * d
            t1 += math.sqrt(acc)
        t2 = 0.0
        for n in range(N):
            for v in range(n + 1, N):
                acc = 0.0
                for k in range(L):
                    d = x[r, v, k] - x[r, n, k]
                    acc += d * d
                t2 += math.sqrt(acc)
        # off-diagonal pairs counted once, hence 1/N^2 instead of 1/(2 N^2)
        out[r] = t1 / N - t2 / (N * N)
    return out


def _energy_score_np(x, y):
    R, N, _ = x.shape
    t1 = np.sqrt(((x - y) ** 2).sum(axis=-1)).mean(axis=-1)
    out = np.empty(R)
    step = max(1, 2_000_000 // max(1, N * N * x.shape[2]))
    for lo in range(0, R, step):
        xs = x[lo:lo + step]
        d = np.sqrt(((xs[:, :, None, :] - xs[:, None, :, :]) ** 2).sum(axis=-1))
        out[lo:lo + step] = t1[lo:lo + step] - d.sum(axis=(1, 2)) / (2.0 * N * N)
    return out


@njit
def _crps_margins_nb(x, y):
    R, N, L = x.shape
    out = np.empty((R, L))
    for r in range(R):
        for k in range(L):
            t1 = 0.0
            for n in range(N):
                t1 += abs(x[r, n, k] - y[k])
            t2 = 0.0
            for n in range(N):
                for v in range(n + 1, N):
                    t2 += abs(x[r, v, k] - x[r, n, k])
            out[r, k] = t1 / N - t2 / (N * N)
    return out


def _crps_margins_np(x, y):
    N = x.shape[1]
    t1 = np.abs(x - y).mean(axis=1)
    t2 = np.abs(x[:, :, None, :] - x[:, None, :, :]).sum(axis=(1, 2))
    return t1 - t2 / (2.0 * N * N)


@njit
def _variogram_score_nb(x, y, w):
    R, N, L = x.shape
    out = np.empty(R)
    for r in range(R):
        total = 0.0
        for a in range(L):
            for b in range(L):
                if w[a, b] == 0.0:
                    continue
                obs = math.sqrt(abs(y[a] - y[b]))
                ens = 0.0
                for n in range(N):
                    ens += math.sqrt(abs(x[r, n, a] - x[r, n, b]))
                d = obs - ens / N
                total += w[a, b] * d * d
        out[r] = total
    return out


def _variogram_score_np(x, y, w):
    obs = np.sqrt(np.abs(y[:, None] - y[None, :]))
    ens = np.sqrt(np.abs(x[:, :, :, None] - x[:, :, None, :])).mean(axis=1)
    return (w * (obs - ens) ** 2).sum(axis=(1, 2))


# ---------------------------------------------------------------------------
# pre-ranks for multivariate rank histograms
# ---------------------------------------------------------------------------

@njit
def _dominance_prerank_nb(pools):
    # sort on the first coordinate: only elements up to the end of the
    # current tie group can be below in every coordinate
    B, P, L = pools.shape
    out = np.empty((B, P), dtype=np.int64)
    col = np.empty(P)
    for b in range(B):
        for p in range(P):
            col[p] = pools[b, p, 0]
        order = np.argsort(col, kind="mergesort")
        end = 0
        for i in range(P):
            v = order[i]
            if end <= i:
                end = i + 1
                while end < P and col[order[end]] == col[v]:
                    end += 1
            count = 0
            for j in range(end):
                u = order[j]
                below = True
                for k in range(1, L):
                    if pools[b, u, k] > pools[b, v, k]:
                        below = False
                        break
                if below:
                    count += 1
            out[b, v] = count
    return out


def _dominance_prerank_np(pools):
    B, P, _ = pools.shape
    out = np.empty((B, P), dtype=np.int64)
    step = max(1, 4_000_000 // (P * P * pools.shape[2]))
    for lo in range(0, B, step):
        ps = pools[lo:lo + step]
        # le[b, u, v] = pool[u] <= pool[v] in every coordinate
        le = (ps[:, :, None, :] <= ps[:, None, :, :]).all(axis=-1)
        out[lo:lo + step] = le.sum(axis=1)
    return out


@njit
def _coordinate_ranks_nb(pools):
    # rank = number of pool values <= the value, per coordinate
    B, P, L = pools.shape
    out = np.empty((B, P, L), dtype=np.int64)
    col = np.empty(P)
    for b in range(B):
        for k in range(L):
            for p in range(P):
                col[p] = pools[b, p, k]
            order = np.argsort(col, kind="mergesort")
            i = 0
            while i < P:
                j = i
                while j + 1 < P and col[order[j + 1]] == col[order[i]]:
                    j += 1
                for q in range(i, j + 1):
                    out[b, order[q], k] = j + 1
                i = j + 1
    return out


def _coordinate_ranks_np(pools):
    s = np.sort(pools, axis=1)
    B, P, L = pools.shape
    out = np.empty((B, P, L), dtype=np.int64)
    for k in range(L):
        for b in range(B):
            out[b, :, k] = np.searchsorted(s[b, :, k], pools[b, :, k], side="right")
    return out


# ---------------------------------------------------------------------------
# EMOS: mean Gaussian CRPS and Nelder-Mead on (a, b, sqrt(c - c_min), sqrt(d))
# ---------------------------------------------------------------------------

@njit
def _emos_objective_nb(theta, xbar, s2, y, c_min):
    a, b, g, h = theta[0], theta[1], theta[2], theta[3]
    c = c_min + g * g
    d = h * h
    total = 0.0
    for i in range(y.shape[0]):
        sigma = math.sqrt(c + d * s2[i])
        z = (y[i] - a - b * xbar[i]) / sigma
        cdf = 0.5 * (1.0 + math.erf(z * _INV_SQRT_2))
        pdf = _INV_SQRT_2PI * math.exp(-0.5 * z * z)
        total += sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - _INV_SQRT_PI)
    return total / y.shape[0]


def _emos_objective_np(theta, xbar, s2, y, c_min):
    a, b, g, h = theta
    sigma = np.sqrt(c_min + g * g + h * h * s2)
    z = (y - a - b * xbar) / sigma
    crps = sigma * (z * (2.0 * special.ndtr(z) - 1.0)
                    + 2.0 * _INV_SQRT_2PI * np.exp(-0.5 * z * z) - _INV_SQRT_PI)
    return float(crps.mean())


@njit
def _emos_objective_free_nb(v, base, free, xbar, s2, y, c_min):
    theta = base.copy()
    for k in range(free.shape[0]):
        theta[free[k]] = v[k]
    return _emos_objective_nb(theta, xbar, s2, y, c_min)


@njit
def _nelder_mead_emos_nb(base, free, xbar, s2, y, c_min, xatol, maxiter):
    n = free.shape[0]
    x0 = np.empty(n)
    for k in range(n):
        x0[k] = base[free[k]]
    sim = np.empty((n + 1, n))
    fsim = np.empty(n + 1)
    sim[0] = x0
    fsim[0] = _emos_objective_free_nb(x0, base, free, xbar, s2, y, c_min)
    for k in range(n):
        v = x0.copy()
        if v[k] != 0.0:
            v[k] *= 1.05
        else:
            v[k] = 0.00025
        sim[k + 1] = v
        fsim[k + 1] = _emos_objective_free_nb(v, base, free, xbar, s2, y, c_min)

    it = 0
    diam = np.inf
    while True:
        order = np.argsort(fsim, kind="mergesort")
        sim = sim[order]
        fsim = fsim[order]
        diam = 0.0
        for j in range(1, n + 1):
            for k in range(n):
                diam = max(diam, abs(sim[j, k] - sim[0, k]))
        if diam <= xatol or it >= maxiter:
            break
        it += 1

        centroid = np.zeros(n)
        for j in range(n):
            centroid += sim[j]
        centroid /= n
        worst = sim[n]

        xr = (1.0 + _RHO) * centroid - _RHO * worst
        fxr = _emos_objective_free_nb(xr, base, free, xbar, s2, y, c_min)
        shrink = False
        if fxr < fsim[0]:
            xe = (1.0 + _RHO * _CHI) * centroid - _RHO * _CHI * worst
            fxe = _emos_objective_free_nb(xe, base, free, xbar, s2, y, c_min)
            if fxe < fxr:
                sim[n] = xe
                fsim[n] = fxe
            else:
                sim[n] = xr
                fsim[n] = fxr
        elif fxr < fsim[n - 1]:
            sim[n] = xr
            fsim[n] = fxr
        elif fxr < fsim[n]:
            xc = (1.0 + _PSI * _RHO) * centroid - _PSI * _RHO * worst
            fxc = _emos_objective_free_nb(xc, base, free, xbar, s2, y, c_min)
            if fxc <= fxr:
                sim[n] = xc
                fsim[n] = fxc
            else:
                shrink = True
        else:
            xcc = (1.0 - _PSI) * centroid + _PSI * worst
            fxcc = _emos_objective_free_nb(xcc, base, free, xbar, s2, y, c_min)
            if fxcc < fsim[n]:
                sim[n] = xcc
                fsim[n] = fxcc
            else:
                shrink = True
        if shrink:
            for j in range(1, n + 1):
                sim[j] = sim[0] + _SIGMA * (sim[j] - sim[0])
                fsim[j] = _emos_objective_free_nb(sim[j], base, free, xbar, s2, y, c_min)

    best = base.copy()
    for k in range(n):
        best[free[k]] = sim[0, k]
    return best, fsim[0], it, diam


def _nelder_mead_emos_np(base, free, xbar, s2, y, c_min, xatol, maxiter):
    def fun(v):
        theta = base.copy()
        theta[free] = v
        return _emos_objective_np(theta, xbar, s2, y, c_min)

    res = optimize.minimize(
        fun, base[free], method="Nelder-Mead",
        options={"xatol": xatol, "fatol": np.inf, "maxiter": maxiter,
                 "maxfev": 10 * maxiter + 10},
    )
    sim = res.final_simplex[0]
    diam = float(np.max(np.abs(sim[1:] - sim[0])))
    best = base.copy()
    best[free] = res.x
    return best, float(res.fun), int(res.nit), diam


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _pick(nb, np_):
    return nb if _accel.USE_NUMBA else np_


def energy_score_batch(x, y):
    x = np.ascontiguousarray(x, dtype=float)
    return _pick(_energy_score_nb, _energy_score_np)(x, np.ascontiguousarray(y, dtype=float))


def crps_margins_batch(x, y):
    x = np.ascontiguousarray(x, dtype=float)
    return _pick(_crps_margins_nb, _crps_margins_np)(x, np.ascontiguousarray(y, dtype=float))


def variogram_score_batch(x, y, w):
    x = np.ascontiguousarray(x, dtype=float)
    return _pick(_variogram_score_nb, _variogram_score_np)(
        x, np.ascontiguousarray(y, dtype=float), np.ascontiguousarray(w, dtype=float))


def dominance_prerank(pools):
    return _pick(_dominance_prerank_nb, _dominance_prerank_np)(
        np.ascontiguousarray(pools, dtype=float))


def coordinate_ranks(pools):
    return _pick(_coordinate_ranks_nb, _coordinate_ranks_np)(
        np.ascontiguousarray(pools, dtype=float))


def emos_objective(theta, xbar, s2, y, c_min):
    args = (np.asarray(theta, dtype=float), np.ascontiguousarray(xbar, dtype=float),
            np.ascontiguousarray(s2, dtype=float), np.ascontiguousarray(y, dtype=float),
            float(c_min))
    return float(_pick(_emos_objective_nb, _emos_objective_np)(*args))


def nelder_mead_emos(x0, free, xbar, s2, y, c_min, xatol, maxiter):
    """Minimize the EMOS objective over the coordinates ``free`` of ``x0``."""
    args = (np.asarray(x0, dtype=float).copy(), np.asarray(free, dtype=np.int64),
            np.ascontiguousarray(xbar, dtype=float),
            np.ascontiguousarray(s2, dtype=float), np.ascontiguousarray(y, dtype=float),
            float(c_min), float(xatol), int(maxiter))
    x, f, nit, diam = _pick(_nelder_mead_emos_nb, _nelder_mead_emos_np)(*args)
    return np.asarray(x), float(f), int(nit), float(diam)
