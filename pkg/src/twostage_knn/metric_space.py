"""Metric primitives, tie-break augmented samples and exact k-NN queries.

Neighbor order is the total order on ``(distance, tiebreak)``: samples closer
to the query come first and equidistant samples are ordered by their stored
uniform tie-break draw, lower first.  Distances are compared with exact
floating-point equality.

Two backends answer the same query.  ``brute`` scans the whole pool;
``kdtree`` uses :class:`scipy.spatial.cKDTree` to find candidates and then
re-ranks them with the same distance routine as ``brute``, so both return
identical neighbor lists.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree


class Metric(enum.Enum):
    LINF = "linf"
    L2 = "l2"
    L1 = "l1"

    @classmethod
    def parse(cls, value: "Metric | str") -> "Metric":
        if isinstance(value, Metric):
            return value
        return cls(str(value).lower())

    @property
    def minkowski_p(self) -> float:
        return {Metric.LINF: math.inf, Metric.L2: 2.0, Metric.L1: 1.0}[self]


class Provenance(enum.IntEnum):
    ROUND1 = 0
    ROUND2_FROM_P = 1
    ROUND2_REJECTION = 2


def _as_points(x, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if dim is None or arr.shape[0] == dim else arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"expected a point or an (n, d) array, got shape {arr.shape}")
    return arr


def pairwise_distances(metric: Metric, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance matrix between rows of ``a`` (q, d) and rows of ``b`` (n, d).

    Every distance in the package goes through this function so that values
    computed in different places compare bit-for-bit.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    diff = np.abs(a[:, None, :] - b[None, :, :])
    if metric is Metric.LINF:
        return diff.max(axis=-1)
    if metric is Metric.L1:
        return diff.sum(axis=-1)
    return np.sqrt((diff * diff).sum(axis=-1))


def rowwise_distances(metric: Metric, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances between ``a`` (q, d) and ``b`` (q, j, d), row by row."""
    diff = np.abs(a[:, None, :] - b)
    if metric is Metric.LINF:
        return diff.max(axis=-1)
    if metric is Metric.L1:
        return diff.sum(axis=-1)
    return np.sqrt((diff * diff).sum(axis=-1))


@dataclass(frozen=True)
class Point:
    coords: tuple[float, ...]

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coords)
        if not coords:
            raise ValueError("a point needs at least one coordinate")
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite coordinate in {coords}")
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self) -> int:
        return len(self.coords)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=np.float64)


@dataclass(frozen=True)
class AugmentedPoint:
    point: Point
    tiebreak: float

    def __post_init__(self):
        if not 0.0 <= self.tiebreak <= 1.0:
            raise ValueError(f"tiebreak must lie in [0, 1], got {self.tiebreak}")


@dataclass(frozen=True)
class LabeledSample:
    aug: AugmentedPoint
    label: int
    provenance: Provenance
    sample_id: int = -1

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    @property
    def point(self) -> Point:
        return self.aug.point

    @property
    def tiebreak(self) -> float:
        return self.aug.tiebreak


def distance(metric: Metric | str, a: Point, b: Point) -> float:
    metric = Metric.parse(metric)
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(pairwise_distances(metric, a.as_array()[None], b.as_array()[None])[0, 0])


@dataclass
class SamplePool:
    """Array-backed labeled sample pool.

    Rows are never re-ordered after construction, and ``ids`` identify
    samples across pools (e.g. when a bundle splits a dataset by provenance).
    """

    points: np.ndarray
    labels: np.ndarray
    tiebreak: np.ndarray
    provenance: np.ndarray
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.points = _as_points(self.points)
        n = self.points.shape[0]
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(n)
        self.tiebreak = np.asarray(self.tiebreak, dtype=np.float64).reshape(n)
        self.provenance = np.asarray(self.provenance, dtype=np.int8).reshape(n)
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(n)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("pool contains non-finite coordinates")
        if np.any((self.tiebreak < 0) | (self.tiebreak > 1)):
            raise ValueError("tiebreak values must lie in [0, 1]")
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def empty(cls, dim: int) -> "SamplePool":
        return cls(np.empty((0, dim)), np.empty(0), np.empty(0), np.empty(0), np.empty(0))

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample]) -> "SamplePool":
        if not samples:
            raise ValueError("cannot infer dimension of an empty sample list")
        return cls(
            np.array([s.point.coords for s in samples], dtype=np.float64),
            np.array([s.label for s in samples]),
            np.array([s.tiebreak for s in samples]),
            np.array([int(s.provenance) for s in samples]),
            np.array([s.sample_id if s.sample_id >= 0 else i for i, s in enumerate(samples)]),
        )

    def to_samples(self) -> list[LabeledSample]:
        return [
            LabeledSample(
                AugmentedPoint(Point(tuple(self.points[i])), float(self.tiebreak[i])),
                int(self.labels[i]),
                Provenance(int(self.provenance[i])),
                int(self.ids[i]),
            )
            for i in range(len(self))
        ]

    def subset(self, mask_or_index) -> "SamplePool":
        return SamplePool(
            self.points[mask_or_index],
            self.labels[mask_or_index],
            self.tiebreak[mask_or_index],
            self.provenance[mask_or_index],
            self.ids[mask_or_index],
        )

    @staticmethod
    def concat(pools: Iterable["SamplePool"]) -> "SamplePool":
        pools = list(pools)
        return SamplePool(
            np.concatenate([p.points for p in pools]),
            np.concatenate([p.labels for p in pools]),
            np.concatenate([p.tiebreak for p in pools]),
            np.concatenate([p.provenance for p in pools]),
            np.concatenate([p.ids for p in pools]),
        )


def _coerce_pool(pool) -> SamplePool:
    if isinstance(pool, SamplePool):
        return pool
    return SamplePool.from_samples(list(pool))


def _coerce_query(x) -> np.ndarray:
    if isinstance(x, Point):
        return x.as_array()[None]
    return _as_points(x)


class NeighborIndex:
    """Exact k-NN over a fixed pool, brute force or k-d tree backed.

    The index is read-only after construction and safe to share between
    concurrent readers.
    """

    # Relative slack covering rounding differences between cKDTree's internal
    # distance arithmetic and :func:`pairwise_distances`.
    _REL = 1e-9

    def __init__(self, pool, metric: Metric | str = Metric.L2, method: str = "auto",
                 chunk: int = 512):
        self.pool = _coerce_pool(pool)
        self.metric = Metric.parse(metric)
        if method == "auto":
            method = "kdtree" if len(self.pool) > 64 else "brute"
        if method not in ("brute", "kdtree"):
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        self.chunk = chunk
        self._tree = cKDTree(self.pool.points) if method == "kdtree" and len(self.pool) else None

    def __len__(self) -> int:
        return len(self.pool)

    def _check(self, queries: np.ndarray, k: int) -> None:
        if len(self.pool) == 0:
            raise ValueError("empty pool")
        if k < 1:
            raise ValueError(f"k must be positive, got {k}")
        if k > len(self.pool):
            raise ValueError(f"k={k} exceeds pool size {len(self.pool)}")
        if queries.shape[1] != self.pool.dim:
            raise ValueError(f"dimension mismatch: {queries.shape[1]} vs {self.pool.dim}")

    def kneighbors(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices (q, k) into the pool and exact distances, in neighbor order."""
        queries = _coerce_query(queries)
        self._check(queries, k)
        if self.method == "brute":
            return self._brute(queries, k)
        return self._kdtree(queries, k)

    def _brute(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.pool)
        tb = self.pool.tiebreak
        out_idx = np.empty((queries.shape[0], k), dtype=np.int64)
        out_d = np.empty((queries.shape[0], k))
        for start in range(0, queries.shape[0], self.chunk):
            q = queries[start:start + self.chunk]
            dist = pairwise_distances(self.metric, q, self.pool.points)
            if k < n:
                part = np.argpartition(dist, k - 1, axis=1)[:, :k]
                kth = np.take_along_axis(dist, part, axis=1).max(axis=1)
                clean = (dist <= kth[:, None]).sum(axis=1) == k
            else:
                part = np.broadcast_to(np.arange(n), dist.shape)
                clean = np.ones(dist.shape[0], dtype=bool)
            cand = np.ascontiguousarray(part)
            cd = np.take_along_axis(dist, cand, axis=1)
            order = np.lexsort((tb[cand], cd), axis=1)
            sel = np.take_along_axis(cand, order, axis=1)
            for r in np.flatnonzero(~clean):
                sel[r] = np.lexsort((tb, dist[r]))[:k]
            out_idx[start:start + q.shape[0]] = sel
            out_d[start:start + q.shape[0]] = np.take_along_axis(dist, sel, axis=1)
        return out_idx, out_d

    def _kdtree(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.pool)
        tb = self.pool.tiebreak
        pts = self.pool.points
        if k == n:
            return self._brute(queries, k)
        tree_d, tree_i = self._tree.query(queries, k=k + 1, p=self.metric.minkowski_p)
        tree_d = tree_d.reshape(queries.shape[0], k + 1)
        tree_i = tree_i.reshape(queries.shape[0], k + 1)
        ours = rowwise_distances(self.metric, queries, pts[tree_i])
        order = np.lexsort((tb[tree_i], ours), axis=1)
        cand_i = np.take_along_axis(tree_i, order, axis=1)
        cand_d = np.take_along_axis(ours, order, axis=1)
        # Points outside the candidate block have tree distance >= tree_d[:, k],
        # so the first k candidates are exact when strictly closer than that.
        limit = tree_d[:, k] * (1.0 - self._REL)
        safe = cand_d[:, k - 1] < limit
        idx = cand_i[:, :k].copy()
        dist = cand_d[:, :k].copy()
        for r in np.flatnonzero(~safe):
            radius = cand_d[r, k - 1] * (1.0 + self._REL) + 1e-300
            ball = np.asarray(
                self._tree.query_ball_point(queries[r], radius, p=self.metric.minkowski_p),
                dtype=np.int64,
            )
            d = pairwise_distances(self.metric, queries[r:r + 1], pts[ball])[0]
            sel = np.lexsort((tb[ball], d))[:k]
            idx[r] = ball[sel]
            dist[r] = d[sel]
        return idx, dist

    def count_within(self, centers, radius) -> np.ndarray:
        """Closed-ball counts ``|{i : rho(center, X_i) <= radius}|`` per center."""
        centers = _coerce_query(centers)
        if len(self.pool) and centers.shape[1] != self.pool.dim:
            raise ValueError(f"dimension mismatch: {centers.shape[1]} vs {self.pool.dim}")
        radius = np.broadcast_to(np.asarray(radius, dtype=np.float64), (centers.shape[0],))
        if np.any(radius < 0):
            raise ValueError("radius must be nonnegative")
        out = np.zeros(centers.shape[0], dtype=np.int64)
        if len(self.pool) == 0:
            return out
        for start in range(0, centers.shape[0], self.chunk):
            dist = pairwise_distances(self.metric, centers[start:start + self.chunk], self.pool.points)
            out[start:start + self.chunk] = (dist <= radius[start:start + self.chunk, None]).sum(axis=1)
        return out


def knn_query(metric: Metric | str, pool, x, k: int) -> list[LabeledSample]:
    """The ``k`` nearest samples to ``x`` in tie-broken neighbor order."""
    pool = _coerce_pool(pool)
    idx, _ = NeighborIndex(pool, metric, method="brute").kneighbors(x, k)
    return pool.subset(idx[0]).to_samples()


def count_within(metric: Metric | str, pool, center, radius: float) -> int:
    if not isinstance(pool, SamplePool) and len(pool) == 0:
        return 0
    pool = _coerce_pool(pool)
    return int(NeighborIndex(pool, metric, method="brute").count_within(center, radius)[0])
