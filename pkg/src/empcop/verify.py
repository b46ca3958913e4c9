"""Proper scores and multivariate rank histograms.

Scores are negatively oriented. Rank statistics place the observation in a
pool with the N members, compute a pre-rank for every pool element and
return the observation's rank among the pre-ranks (1..N+1), breaking ties
uniformly at random.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .core import DataError, MarginId

RANK_KINDS = ("multivariate", "band_depth", "average")


@dataclass(frozen=True)
class StationGeometry:
    """Pairwise station distances in km."""

    distances: Mapping[frozenset, float]

    def __post_init__(self):
        for pair, d in self.distances.items():
            if len(pair) != 2:
                raise ValueError(f"distance key {set(pair)} is not a station pair")
            if not d > 0:
                raise ValueError(f"distance between {sorted(pair)} must be positive, got {d}")

    @classmethod
    def from_pairs(cls, pairs) -> "StationGeometry":
        """From ``{(a, b): km}`` or an iterable of ``(a, b, km)``."""
        items = pairs.items() if isinstance(pairs, Mapping) else (((p[0], p[1]), p[2]) for p in pairs)
        out = {}
        for (a, b), d in items:
            key = frozenset((a, b))
            if key in out and out[key] != d:
                raise ValueError(f"conflicting distances for {a}-{b}")
            out[key] = float(d)
        return cls(out)

    @classmethod
    def from_matrix(cls, stations: Sequence[str], matrix) -> "StationGeometry":
        m = np.asarray(matrix, dtype=float)
        if m.shape != (len(stations), len(stations)) or not np.allclose(m, m.T):
            raise ValueError("distance matrix must be square and symmetric")
        return cls.from_pairs({(a, b): m[i, j] for (i, a), (j, b)
                               in itertools.combinations(enumerate(stations), 2)})

    def distance(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        try:
            return self.distances[frozenset((a, b))]
        except KeyError:
            raise DataError(f"no distance between stations {a} and {b}") from None

    def to_dict(self) -> dict:
        return {"|".join(sorted(k)): v for k, v in sorted(self.distances.items(), key=lambda kv: sorted(kv[0]))}


@dataclass
class RankHistogram:
    kind: str
    counts: np.ndarray
    cases: int = field(init=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.cases = int(self.counts.sum())

    @classmethod
    def from_ranks(cls, kind: str, ranks, n_members: int) -> "RankHistogram":
        r = np.asarray(ranks, dtype=np.int64)
        if r.size and (r.min() < 1 or r.max() > n_members + 1):
            raise DataError(f"ranks outside 1..{n_members + 1}")
        return cls(kind, np.bincount(r - 1, minlength=n_members + 1))

    @property
    def n_bins(self) -> int:
        return self.counts.size

    def chi2(self) -> tuple[float, int, float]:
        """Chi-square statistic against uniform, degrees of freedom, p-value."""
        k = self.n_bins
        expected = self.cases / k
        if expected == 0:
            return float("nan"), k - 1, float("nan")
        stat = float(((self.counts - expected) ** 2).sum() / expected)
        return stat, k - 1, float(stats.chi2.sf(stat, k - 1))

    def rebin(self, n_bins: int = 10) -> tuple[np.ndarray, np.ndarray]:
        """Aggregate into ``n_bins`` bins; returns (counts, ranks per bin).

        Bin b covers ranks ceil((b-1) K / n_bins) + 1 .. ceil(b K / n_bins)
        for K = N + 1.
        """
        K = self.n_bins
        edges = [math.ceil(b * K / n_bins) for b in range(n_bins + 1)]
        counts = np.array([self.counts[edges[b]:edges[b + 1]].sum() for b in range(n_bins)])
        widths = np.diff(edges)
        return counts, widths


@dataclass
class VerificationReport:
    method: str
    mean_es: float
    mean_vs: float
    mean_crps: dict
    histograms: dict
    cases: int


def _as_members(members, L=None) -> np.ndarray:
    x = np.asarray(members, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if L in (None, 1) else x[None, :]
    if x.ndim != 2 or x.shape[0] < 1:
        raise DataError("members must be an (N, L) array with N >= 1")
    return x


def crps_ensemble(members, y) -> float:
    x = np.asarray(members, dtype=float).reshape(-1)
    if x.size == 0:
        raise DataError("empty ensemble")
    return float(_kernels.crps_margins_batch(x[None, :, None], np.array([float(y)]))[0, 0])


def energy_score(members, y) -> float:
    yv = np.atleast_1d(np.asarray(y, dtype=float))
    x = _as_members(members, yv.size)
    if x.shape[1] != yv.size:
        raise DataError(f"member dimension {x.shape[1]} does not match observation dimension {yv.size}")
    return float(_kernels.energy_score_batch(x[None], yv)[0])


def vs_weights(geometry: StationGeometry, margins: Sequence) -> np.ndarray:
    """Inverse-distance weights normalized over all ordered off-diagonal pairs."""
    stations = [m.station if isinstance(m, MarginId) else str(m) for m in margins]
    L = len(stations)
    if L < 2:
        raise DataError("variogram weights need at least two margins")
    inv = np.zeros((L, L))
    for i, j in itertools.permutations(range(L), 2):
        d = geometry.distance(stations[i], stations[j])
        if not d > 0:
            raise DataError(f"distance between {stations[i]} and {stations[j]} must be positive")
        inv[i, j] = 1.0 / d
    return inv / inv.sum()


def variogram_score(members, y, weights) -> float:
    yv = np.asarray(y, dtype=float).reshape(-1)
    x = _as_members(members, yv.size)
    w = np.asarray(weights, dtype=float)
    if x.shape[1] != yv.size or w.shape != (yv.size, yv.size):
        raise DataError("variogram score dimension mismatch")
    if (w < 0).any() or np.diag(w).any():
        raise DataError("weights must be nonnegative with zero diagonal")
    return float(_kernels.variogram_score_batch(x[None], yv, w)[0])


# -- rank statistics ---------------------------------------------------------

def _pools(members, y):
    """Stack into ``(B, N+1, L)`` with the observation first."""
    x = np.asarray(members, dtype=float)
    yv = np.asarray(y, dtype=float)
    if x.ndim == 2:
        x, yv = x[None], yv.reshape(1, -1)
    if x.ndim != 3 or yv.shape != (x.shape[0], x.shape[2]):
        raise DataError(f"rank statistic dimension mismatch: members {x.shape}, obs {yv.shape}")
    return np.concatenate([yv[:, None, :], x], axis=1)


def prerank_to_rank(pre, u) -> np.ndarray:
    """Rank of column 0 among the pre-ranks, random among equal values."""
    pre = np.asarray(pre)
    below = (pre[:, 1:] < pre[:, :1]).sum(axis=1)
    ties = (pre[:, 1:] == pre[:, :1]).sum(axis=1)
    return below + 1 + np.floor(np.asarray(u) * (ties + 1)).astype(np.int64)


def preranks(pools, kinds=RANK_KINDS) -> dict[str, np.ndarray]:
    """Integer pre-ranks of every pool element per kind, each ``(B, P)``.

    Band depth and average pre-ranks are sums over margins rather than
    means, which keeps them integral and leaves their order unchanged.
    The coordinate ranks they share are computed once.
    """
    pools = np.asarray(pools, dtype=float)
    P = pools.shape[1]
    bad = [k for k in kinds if k not in RANK_KINDS]
    if bad:
        raise ValueError(f"unknown rank kind {bad[0]!r}")
    out = {}
    if "multivariate" in kinds:
        out["multivariate"] = _kernels.dominance_prerank(pools)
    if "band_depth" in kinds or "average" in kinds:
        r = _kernels.coordinate_ranks(pools)
        if "band_depth" in kinds:
            out["band_depth"] = ((P - r) * (r - 1)).sum(axis=2)
        if "average" in kinds:
            out["average"] = r.sum(axis=2)
    return {k: out[k] for k in kinds}


def prerank(kind: str, pools) -> np.ndarray:
    """Integer pre-ranks of every pool element for one kind, shape ``(B, P)``."""
    return preranks(pools, (kind,))[kind]


def rank_batch(kind: str, members, y, rng_seed=None) -> np.ndarray:
    """Vectorized rank statistic for ``(B, N, L)`` members and ``(B, L)`` obs."""
    pools = _pools(members, y)
    u = np.random.default_rng(rng_seed).random(pools.shape[0])
    return prerank_to_rank(prerank(kind, pools), u)


def multivariate_rank(members, y, rng_seed=None) -> int:
    return int(rank_batch("multivariate", _as_members(members, np.size(y)), np.atleast_1d(y), rng_seed)[0])


def band_depth_rank(members, y, rng_seed=None) -> int:
    return int(rank_batch("band_depth", _as_members(members, np.size(y)), np.atleast_1d(y), rng_seed)[0])


def average_rank(members, y, rng_seed=None) -> int:
    return int(rank_batch("average", _as_members(members, np.size(y)), np.atleast_1d(y), rng_seed)[0])


def aggregate(method: str, es, vs, crps, ranks: Mapping[str, Sequence[int]] | None = None,
              n_members: int | None = None, margins: Sequence | None = None) -> VerificationReport:
    """Average per-case scores and sum rank counts into a report.

    Parameters
    ----------
    es, vs : sequence, shape (cases,)
    crps : array_like, shape (cases, L)
    ranks : mapping kind -> per-case ranks
    n_members : int or sequence of int
        Ensemble size (per case or common); required when ``ranks`` is given.
    """
    es = np.asarray(es, dtype=float)
    vs = np.asarray(vs, dtype=float)
    if es.size == 0:
        raise DataError("aggregate needs at least one case")
    crps = np.asarray(crps, dtype=float).reshape(es.size, -1)
    if vs.size != es.size:
        raise DataError("ES and VS case counts differ")
    margins = list(margins) if margins is not None else [f"margin{i}" for i in range(crps.shape[1])]
    histograms = {}
    if ranks:
        if n_members is None:
            raise DataError("n_members is required for rank histograms")
        sizes = np.unique(np.atleast_1d(n_members))
        if sizes.size != 1:
            raise DataError(f"inconsistent ensemble sizes across cases: {sizes.tolist()}")
        n_members = int(sizes[0])
        for kind, r in ranks.items():
            r = np.asarray(r)
            if r.size != es.size:
                raise DataError(f"{kind} ranks cover {r.size} cases, scores {es.size}")
            histograms[kind] = RankHistogram.from_ranks(kind, r, n_members)
    return VerificationReport(method, float(es.mean()), float(vs.mean()),
                              {str(m): float(v) for m, v in zip(margins, crps.mean(axis=0))},
                              histograms, int(es.size))


def combine_histograms(hists: Sequence[RankHistogram]) -> RankHistogram:
    """Sum histograms of one kind; bin counts must agree."""
    if not hists:
        raise DataError("nothing to combine")
    kinds = {h.kind for h in hists}
    sizes = {h.n_bins for h in hists}
    if len(kinds) > 1 or len(sizes) > 1:
        raise DataError(f"inconsistent histograms: kinds {kinds}, bins {sizes}")
    return RankHistogram(hists[0].kind, np.sum([h.counts for h in hists], axis=0))
