"""k-NN votes, the standard classifier and the two-pool modified classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metric_space import Metric, NeighborIndex, Point, Provenance, SamplePool, _coerce_pool


@dataclass(frozen=True)
class VoteResult:
    ones: int
    k_used: int
    neighbor_ids: tuple[int, ...]

    @property
    def fraction_ones(self) -> float:
        return self.ones / self.k_used


def vote_counts(index: NeighborIndex, X, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Number of label-1 neighbors among the k nearest, plus neighbor rows."""
    idx, _ = index.kneighbors(X, k)
    return index.pool.labels[idx].sum(axis=1, dtype=np.int64), idx


def majority(ones: np.ndarray, k: int) -> np.ndarray:
    # fraction >= 1/2 evaluated in integers; an exact half votes 1
    return (2 * np.asarray(ones) >= k).astype(np.int8)


def vote_fraction(metric: Metric | str, pool, x, k: int) -> VoteResult:
    pool = _coerce_pool(pool)
    index = NeighborIndex(pool, metric, method="brute")
    ones, idx = vote_counts(index, x, k)
    return VoteResult(int(ones[0]), k, tuple(int(i) for i in pool.ids[idx[0]]))


def classify_standard(metric: Metric | str, pool, x, k: int) -> int:
    return int(majority(vote_fraction(metric, pool, x, k).ones, k))


class KNNClassifier:
    """Standard k-NN classifier over one pool, vectorized over queries."""

    def __init__(self, pool, k: int, metric: Metric | str = Metric.L2, method: str = "auto"):
        self.pool = _coerce_pool(pool)
        if k < 1 or k > len(self.pool):
            raise ValueError(f"k={k} is invalid for a pool of {len(self.pool)} samples")
        self.k = k
        self.index = NeighborIndex(self.pool, metric, method)

    def vote(self, X) -> np.ndarray:
        ones, _ = vote_counts(self.index, X, self.k)
        return ones / self.k

    def predict(self, X) -> np.ndarray:
        ones, _ = vote_counts(self.index, X, self.k)
        return majority(ones, self.k)

    __call__ = predict


@dataclass
class ClassifierBundle:
    """Inputs of the modified classifier.

    ``region`` routes queries: members of its hard region vote over the
    rejection pool, everything else over the samples drawn from P.  Without
    a region the classifier is plain k-NN over the union of both pools.
    """

    round1_and_P_pool: SamplePool
    rejection_pool: SamplePool
    region: object | None
    k: int

    def __post_init__(self):
        if self.region is None and len(self.rejection_pool) > 0:
            raise ValueError("rejection samples require a region to route queries")
        prov = self.round1_and_P_pool.provenance
        if np.any(prov == Provenance.ROUND2_REJECTION):
            raise ValueError("P pool contains rejection samples")
        if np.any(self.rejection_pool.provenance != Provenance.ROUND2_REJECTION):
            raise ValueError("rejection pool contains samples drawn from P")


class ModifiedKNNClassifier:
    """Routes each query to the rejection pool or the P pool by region membership."""

    def __init__(self, bundle: ClassifierBundle, metric: Metric | str = Metric.L2,
                 method: str = "auto"):
        self.bundle = bundle
        self.k = bundle.k
        if bundle.region is None:
            union = SamplePool.concat([bundle.round1_and_P_pool, bundle.rejection_pool])
            self._union = KNNClassifier(union, self.k, metric, method)
            self._p = self._rej = None
        else:
            if len(bundle.rejection_pool) < self.k or len(bundle.round1_and_P_pool) < self.k:
                raise ValueError(
                    f"both pools need at least k={self.k} samples "
                    f"(got {len(bundle.round1_and_P_pool)} and {len(bundle.rejection_pool)})"
                )
            self._union = None
            self._p = KNNClassifier(bundle.round1_and_P_pool, self.k, metric, method)
            self._rej = KNNClassifier(bundle.rejection_pool, self.k, metric, method)

    def neighbor_rows(self, X) -> tuple[np.ndarray, np.ndarray]:
        """(routed_to_rejection, neighbor ids) for each query; used for audits."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self._union is not None:
            idx, _ = self._union.index.kneighbors(X, self.k)
            return np.zeros(len(X), dtype=bool), self._union.pool.ids[idx]
        hard = self.bundle.region.in_hard_region(X)
        ids = np.empty((len(X), self.k), dtype=np.int64)
        for clf, mask in ((self._rej, hard), (self._p, ~hard)):
            if mask.any():
                idx, _ = clf.index.kneighbors(X[mask], self.k)
                ids[mask] = clf.pool.ids[idx]
        return hard, ids

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self._union is not None:
            return self._union.predict(X)
        hard = self.bundle.region.in_hard_region(X)
        out = np.empty(len(X), dtype=np.int8)
        if hard.any():
            out[hard] = self._rej.predict(X[hard])
        if (~hard).any():
            out[~hard] = self._p.predict(X[~hard])
        return out

    __call__ = predict


def classify_modified(bundle: ClassifierBundle, x, metric: Metric | str = Metric.L2) -> int:
    if isinstance(x, Point):
        x = x.as_array()
    return int(ModifiedKNNClassifier(bundle, metric, method="brute").predict(np.atleast_2d(x))[0])
