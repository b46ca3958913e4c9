"""Domain types, ranks, empirical copulas and the reordering step.

Ranks are 1-based throughout. A :class:`RankTemplate` stores one permutation
per margin; applying it to sorted marginal samples with :func:`reorder`
transfers the template's rank dependence to the samples.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

TEMPLATE_SOURCES = ("ecc", "clark_schaake", "random_schaake", "simschaake", "custom")


class DataError(ValueError):
    """Input data violates a structural precondition."""


class InfeasibleError(DataError):
    """Not enough archive data to carry out the requested step."""


@dataclass(frozen=True, order=True)
class MarginId:
    """One (variable, station, lead time) combination."""

    variable: str
    station: str
    lead_time: int = 24

    @property
    def reduced(self) -> tuple[str, str]:
        """The (variable, station) pair, dropping lead time."""
        return (self.variable, self.station)

    def __str__(self):
        return f"{self.variable}@{self.station}+{self.lead_time}h"


@dataclass(frozen=True)
class ForecastCase:
    init_date: dt.date
    verification_date: dt.date
    members: Mapping[MarginId, tuple[float, ...]]

    def __post_init__(self):
        sizes = {len(v) for v in self.members.values()}
        if len(sizes) > 1:
            raise DataError(f"ragged ensemble on {self.verification_date}: member counts {sorted(sizes)}")
        if sizes and sizes.pop() < 2:
            raise DataError(f"ensemble on {self.verification_date} has fewer than 2 members")
        for m in self.members:
            if (self.verification_date - self.init_date).days != m.lead_time // 24:
                raise DataError(
                    f"{m}: init {self.init_date} + {m.lead_time}h does not reach {self.verification_date}")

    @property
    def margins(self) -> tuple[MarginId, ...]:
        return tuple(sorted(self.members))

    @property
    def n_members(self) -> int:
        return len(next(iter(self.members.values())))

    def as_array(self, margins: Sequence[MarginId] | None = None) -> np.ndarray:
        """Members as an ``(L, M)`` array in the given margin order."""
        margins = self.margins if margins is None else margins
        try:
            return np.array([self.members[m] for m in margins], dtype=float)
        except KeyError as exc:
            raise DataError(f"forecast for {self.verification_date} lacks margin {exc.args[0]}") from None


@dataclass(frozen=True)
class ObservationRecord:
    date: dt.date
    values: Mapping[MarginId, float]


@dataclass(eq=False)
class RankTemplate:
    """Per-margin permutations derived from a dependence data set.

    ``permutations[l, n]`` is the rank (1..N) of the n-th template entry in
    margin ``margins[l]``.
    """

    margins: tuple[MarginId, ...]
    permutations: np.ndarray
    source: str = "custom"
    source_dates: tuple[dt.date, ...] | None = None

    def __post_init__(self):
        self.permutations = np.asarray(self.permutations, dtype=np.int64)
        if self.permutations.ndim != 2 or self.permutations.shape[0] != len(self.margins):
            raise DataError("permutations must have shape (n_margins, N)")
        if self.source not in TEMPLATE_SOURCES:
            raise ValueError(f"unknown template source {self.source!r}")
        n = self.size
        expected = np.arange(1, n + 1)
        for m, perm in zip(self.margins, self.permutations):
            if not np.array_equal(np.sort(perm), expected):
                raise DataError(f"permutation for {m} is not a bijection on 1..{n}")
        if self.source_dates is not None and len(self.source_dates) != n:
            raise DataError(f"{len(self.source_dates)} source dates for a template of size {n}")

    @property
    def size(self) -> int:
        return self.permutations.shape[1]


@dataclass(eq=False)
class PostprocessedEnsemble:
    margins: tuple[MarginId, ...]
    members: np.ndarray  # (L, N)
    method: str = "custom"

    def as_mapping(self) -> dict[MarginId, tuple[float, ...]]:
        return {m: tuple(row) for m, row in zip(self.margins, self.members.tolist())}


def _margin_table(data, margins=None):
    """Normalize mapping / 2-D array input into (margins, (L, N) array)."""
    if isinstance(data, Mapping):
        margins = tuple(sorted(data)) if margins is None else tuple(margins)
        rows = [np.asarray(data[m], dtype=float) for m in margins]
        lengths = {r.shape for r in rows}
        if len(lengths) > 1:
            raise DataError(f"ragged margin lengths: {sorted(len(r) for r in rows)}")
        return margins, np.array(rows, dtype=float)
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DataError("expected a mapping or an (L, N) array")
    if margins is None:
        margins = tuple(MarginId("v", f"s{i}") for i in range(arr.shape[0]))
    margins = tuple(margins)
    if len(margins) != arr.shape[0]:
        raise DataError(f"{len(margins)} margins for {arr.shape[0]} data rows")
    return margins, arr


def compute_ranks(values, rng_seed=None, *, margin=None) -> np.ndarray:
    """1-based ranks with ties broken uniformly at random.

    Parameters
    ----------
    values : array_like, shape (N,)
    rng_seed : int, SeedSequence or Generator
        Drives the random tie resolution only.
    margin : optional
        Used to label error messages.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise DataError("compute_ranks needs a non-empty 1-D input")
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        where = f" in margin {margin}" if margin is not None else ""
        raise DataError(f"non-finite value {v[bad[0]]} at index {bad[0]}{where}")
    rng = np.random.default_rng(rng_seed)
    keys = rng.random(v.size)
    order = np.lexsort((keys, v))
    ranks = np.empty(v.size, dtype=np.int64)
    ranks[order] = np.arange(1, v.size + 1)
    return ranks


def empirical_copula_eval(template: RankTemplate, indices) -> float:
    """Empirical copula at grid point ``indices / N`` (indices in 0..N)."""
    idx = np.asarray(indices, dtype=np.int64)
    n = template.size
    if idx.shape != (len(template.margins),):
        raise DataError(f"need {len(template.margins)} indices, got shape {idx.shape}")
    if idx.min() < 0 or idx.max() > n:
        raise DataError(f"copula indices must lie in 0..{n}, got {idx.tolist()}")
    inside = (template.permutations <= idx[:, None]).all(axis=0)
    return float(inside.sum()) / n


def derive_template(data, rng_seed=None, *, margins=None, source="custom",
                    source_dates=None) -> RankTemplate:
    """Rank each margin of a dependence data set.

    ``data`` is a mapping ``MarginId -> N values`` or an ``(L, N)`` array.
    Each margin gets its own child seed for tie breaking.
    """
    margins, table = _margin_table(data, margins)
    seeds = np.random.SeedSequence(_entropy(rng_seed)).spawn(len(margins))
    perms = np.array([compute_ranks(row, s, margin=m) for row, s, m in zip(table, seeds, margins)])
    if source_dates is not None:
        source_dates = tuple(source_dates)
    return RankTemplate(margins, perms.reshape(len(margins), -1), source, source_dates)


def reorder(samples, template: RankTemplate, *, method=None) -> PostprocessedEnsemble:
    """Arrange sorted marginal samples by the template's ranks.

    Output member n of margin l is the ``permutations[l, n]``-th smallest
    sample of margin l.
    """
    margins = template.margins
    if isinstance(samples, Mapping):
        missing = [m for m in margins if m not in samples]
        if missing:
            raise DataError(f"samples lack margins {missing}")
    _, table = _margin_table(samples, margins)
    if table.shape[1] != template.size:
        raise DataError(f"sample size {table.shape[1]} does not match template size {template.size}")
    unsorted = np.flatnonzero((np.diff(table, axis=1) < 0).any(axis=1))
    if unsorted.size:
        raise DataError(f"samples for {margins[unsorted[0]]} are not in ascending order")
    out = np.take_along_axis(table, template.permutations - 1, axis=1)
    return PostprocessedEnsemble(margins, out, method or template.source)


def _entropy(seed):
    """Turn a seed-like value into something SeedSequence accepts."""
    if isinstance(seed, np.random.SeedSequence):
        return seed.generate_state(4)
    if isinstance(seed, np.random.Generator):
        return seed.integers(0, 2**63, size=2)
    return seed
