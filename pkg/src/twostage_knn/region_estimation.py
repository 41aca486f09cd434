"""Confidence constants and membership tests for the estimated hard regions.

The hard region is the set of points whose k-NN vote over the first-round
sample lies within ``3 * delta_uc`` of 1/2.  The augmented region is the
union, over hard points ``u``, of the open ball around ``u`` whose radius is
the distance from ``u`` to its ``(k_bar + 1)``-th first-round neighbor.

Deciding the augmented region exactly would need a search over every
possible center.  Centers are instead taken from the query point itself plus
a finite unlabeled witness pool drawn from the marginal when the handle is
built.  A larger pool can only add members, and the query acting as its own
witness keeps the hard region inside the augmented one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .knn_core import vote_counts
from .metric_space import Metric, NeighborIndex, SamplePool, pairwise_distances


class ConstantsError(ValueError):
    """Raised when a parameter setting leaves a constant undefined."""


@dataclass(frozen=True)
class HyperParams:
    k: int
    n: int
    m: int
    delta: float
    pi: float = 0.1
    zeta: float = 0.0
    c0: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    d_vc: int = 2

    def __post_init__(self):
        if self.k < 1 or self.n < 1 or self.m < 0:
            raise ValueError("k and n must be positive and m nonnegative")
        if self.k >= self.n:
            raise ValueError(f"k={self.k} must be smaller than n={self.n}")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < self.pi < 1:
            raise ValueError("pi must lie in (0, 1)")
        if self.zeta < 0:
            raise ValueError("zeta must be nonnegative")
        if min(self.c0, self.c1, self.c2) <= 0 or self.d_vc < 1:
            raise ValueError("c0, c1, c2 and d_vc must be positive")

    @property
    def c_delta_valid(self) -> bool:
        return self.k > 4 * math.log(2 / self.delta)

    def with_(self, **changes) -> "HyperParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class DerivedConstants:
    c_delta: float
    big_delta: float
    delta_uc: float
    k_bar: int
    p_n: float
    p_n_prime: float
    p_n_dprime: float


def c_delta(k: int, delta: float) -> float:
    """``1 / (1 - sqrt((4/k) ln(2/delta)))``; finite only for ``k > 4 ln(2/delta)``."""
    if k <= 4 * math.log(2 / delta):
        raise ConstantsError(f"c_delta undefined: k={k} <= 4 ln(2/delta) = {4 * math.log(2 / delta):.6g}")
    return 1.0 / (1.0 - math.sqrt(4.0 / k * math.log(2.0 / delta)))


def big_delta(k: int, delta: float) -> float:
    return min(0.5, math.sqrt(math.log(2.0 / delta) / k))


def derive_constants(params: HyperParams, check_k_bar: bool = True) -> DerivedConstants:
    k, n, delta, d = params.k, params.n, params.delta, params.d_vc
    cd = c_delta(k, delta)
    delta_uc = params.c0 * math.sqrt((d * math.log(n) + math.log(1.0 / delta)) / k)
    k_bar = math.ceil(cd * (1.0 + params.zeta) * k
                      + params.c1 * math.sqrt(n * (math.log(4.0 / delta) + d))) - 1
    if check_k_bar and k_bar >= n:
        raise ConstantsError(f"precondition k_bar < n violated: k_bar={k_bar} >= n={n}")
    slack = params.c2 * math.sqrt((d + math.log(1.0 / delta)) / n)
    return DerivedConstants(
        c_delta=cd,
        big_delta=big_delta(k, delta),
        delta_uc=delta_uc,
        k_bar=k_bar,
        p_n=cd * k / n,
        p_n_prime=k / n + slack,
        p_n_dprime=k_bar / n + slack,
    )


class RegionHandle:
    """Hard and augmented region membership bound to one first-round sample."""

    def __init__(self, round1: SamplePool, params: HyperParams, witness_pool: np.ndarray,
                 metric: Metric | str = Metric.L2, consts: DerivedConstants | None = None,
                 method: str = "auto", chunk: int = 256):
        if len(round1) != params.n:
            raise ValueError(f"round-1 sample has {len(round1)} points, expected n={params.n}")
        witness_pool = np.asarray(witness_pool, dtype=np.float64)
        if witness_pool.ndim != 2 or len(witness_pool) == 0:
            raise ValueError("witness pool must be a nonempty (w, d) array")
        self.round1 = round1
        self.params = params
        self.consts = consts or derive_constants(params)
        if self.consts.k_bar >= params.n:
            raise ConstantsError("k_bar must be smaller than n")
        self.metric = Metric.parse(metric)
        self.index = NeighborIndex(round1, self.metric, method)
        self.witness_pool = witness_pool
        self.chunk = chunk
        hard, radius = self._stats(witness_pool)
        keep = hard & (radius > 0)
        order = np.argsort(-radius[keep], kind="stable")
        self._hard_witnesses = witness_pool[keep][order]
        self._hard_radii = radius[keep][order]

    @classmethod
    def build(cls, round1: SamplePool, params: HyperParams, dist, rng: np.random.Generator,
              witness_size: int = 10_000, **kw) -> "RegionHandle":
        witnesses = dist.sample_instances(witness_size, rng)
        return cls(round1, params, witnesses, metric=dist.metric, **kw)

    @property
    def hard_witness_count(self) -> int:
        return len(self._hard_witnesses)

    def _stats(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k, kb = self.params.k, self.consts.k_bar
        idx, dist = self.index.kneighbors(X, kb + 1)
        ones = self.round1.labels[idx[:, :k]].sum(axis=1, dtype=np.int64)
        return self._is_hard(ones), dist[:, kb]

    def _is_hard(self, ones: np.ndarray) -> np.ndarray:
        return np.abs(ones / self.params.k - 0.5) < 3.0 * self.consts.delta_uc

    def vote(self, X) -> np.ndarray:
        ones, _ = vote_counts(self.index, np.atleast_2d(X), self.params.k)
        return ones / self.params.k

    def in_hard_region(self, X) -> np.ndarray:
        ones, _ = vote_counts(self.index, np.atleast_2d(np.asarray(X, dtype=np.float64)), self.params.k)
        return self._is_hard(ones)

    def augmented_radius(self, X) -> np.ndarray:
        """Distance from each point to its ``(k_bar + 1)``-th first-round neighbor."""
        _, dist = self.index.kneighbors(np.atleast_2d(X), self.consts.k_bar + 1)
        return dist[:, -1]

    def in_augmented_region(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        hard, radius = self._stats(X)
        out = hard & (radius > 0)
        if self.hard_witness_count == 0:
            return out
        todo = np.flatnonzero(~out)
        for start in range(0, len(todo), self.chunk):
            rows = todo[start:start + self.chunk]
            d = pairwise_distances(self.metric, X[rows], self._hard_witnesses)
            out[rows] = (d < self._hard_radii[None, :]).any(axis=1)
        return out

    contains = in_augmented_region


def hard_region_member(handle: RegionHandle, x) -> bool:
    return bool(handle.in_hard_region(_row(x))[0])


def augmented_member(handle: RegionHandle, x) -> bool:
    return bool(handle.in_augmented_region(_row(x))[0])


def _row(x) -> np.ndarray:
    if hasattr(x, "as_array"):
        x = x.as_array()
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def region_measure_positive(handle: RegionHandle, unlabeled_budget: int, dist,
                            rng: np.random.Generator) -> bool:
    """Whether any of ``unlabeled_budget`` fresh draws from the marginal falls in
    the augmented region.  Draws are unlabeled and cost no label budget."""
    return search_region(handle, unlabeled_budget, dist, rng)[0]


def search_region(handle: RegionHandle, unlabeled_budget: int, dist,
                  rng: np.random.Generator, chunk: int = 2048) -> tuple[bool, int]:
    """Like :func:`region_measure_positive`, also returning the draws used."""
    used = 0
    while used < unlabeled_budget:
        X = dist.sample_instances(min(chunk, unlabeled_budget - used), rng)
        inside = handle.in_augmented_region(X)
        if inside.any():
            return True, used + int(np.argmax(inside)) + 1
        used += len(X)
    return False, used
