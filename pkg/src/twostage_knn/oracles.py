"""Synthetic distributions with closed-form oracles.

Every built-in family is uniform on the unit cube ``[0, 1]^d`` and its
conditional probability depends on the first coordinate only,
``eta(x) = f(x[0])`` for a piecewise-linear profile ``f``.  Balls are closed
and intersected with the cube; under the l-infinity metric such a ball is a
box, so its mass is a product of side lengths and the mean of ``eta`` over
it is the mean of ``f`` over the first side.  In one dimension every metric
gives the same intervals.

The boundary and easy-region predicates quantify over all radii up to the
probability radius.  They are decided by evaluating the ball mean on a
log-spaced radius grid joined with the radii at which the ball's first side
crosses a profile knot or the cube face; for linear profiles the ball mean is
monotone between those radii, so the decision is exact there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metric_space import Metric


class OutOfSupportError(ValueError):
    pass


# ---------------------------------------------------------------------------
# profiles f: [0, 1] -> [0, 1]
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearProfile:
    def __call__(self, t):
        return np.asarray(t, dtype=np.float64)

    knots: tuple[float, ...] = ()


@dataclass(frozen=True)
class PiecewiseProfile:
    """``1/2 + clip(slope * (t - crossing), -half_height, half_height)``."""

    slope: float
    half_height: float
    crossing: float = 0.5

    def __post_init__(self):
        if self.slope <= 0:
            raise ValueError("slope must be positive")
        if not 0 < self.half_height <= 0.5:
            raise ValueError("half_height must lie in (0, 1/2]")

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        return 0.5 + np.clip(self.slope * (t - self.crossing), -self.half_height, self.half_height)

    @property
    def knots(self) -> tuple[float, ...]:
        w = self.half_height / self.slope
        return (self.crossing - w, self.crossing + w)


@dataclass(frozen=True)
class ConstantProfile:
    value: float

    def __post_init__(self):
        if not 0 <= self.value <= 1:
            raise ValueError("constant eta must lie in [0, 1]")

    def __call__(self, t):
        return np.full(np.shape(t), self.value, dtype=np.float64)

    knots: tuple[float, ...] = ()


def _interval_mean(profile, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    # Midpoint rule on each linear piece is exact.
    cuts = [lo] + [np.clip(kn, lo, hi) for kn in profile.knots] + [hi]
    total = np.zeros(np.broadcast(lo, hi).shape)
    for a, b in zip(cuts[:-1], cuts[1:]):
        total = total + (b - a) * profile(0.5 * (a + b))
    return total / (hi - lo)


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

@dataclass
class OracleDistribution:
    """Uniform measure on ``[0,1]^dim`` with ``eta(x) = profile(x[0])``.

    ``alpha, L`` certify mass-based smoothness, ``beta, C_margin`` the margin
    condition and ``zeta`` regularity (zero for a density bounded below).
    """

    name: str
    dim: int
    profile: object
    metric: Metric = Metric.LINF
    d_vc: int = 2
    alpha: float = 1.0
    L: float = 1.0
    beta: float = 1.0
    C_margin: float = 2.0
    zeta: float = 0.0
    radius_grid: int = 256
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.metric = Metric.parse(self.metric)
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.dim > 1 and self.metric is not Metric.LINF:
            raise ValueError("multi-dimensional families are defined for the l-infinity metric only")

    # -- sampling ---------------------------------------------------------

    def sample_instances(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if count < 0:
            raise ValueError("count must be nonnegative")
        return rng.random((count, self.dim))

    def sample_labels(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return (rng.random(len(X)) < self.eta(X)).astype(np.int8)

    # -- pointwise oracles ------------------------------------------------

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, self.dim) if self.dim > 1 else X.reshape(-1, 1)
        if X.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim}-dimensional points, got shape {X.shape}")
        if not np.all(np.isfinite(X)) or np.any((X < 0) | (X > 1)):
            raise OutOfSupportError("query lies outside the support [0, 1]^d")
        return X

    def eta(self, X) -> np.ndarray:
        X = self._check(X)
        return self.profile(X[:, 0])

    def bayes_classify(self, X) -> np.ndarray:
        return (self.eta(X) >= 0.5).astype(np.int8)

    def ball_mass(self, X, r) -> np.ndarray:
        X = self._check(X)
        r = np.broadcast_to(np.asarray(r, dtype=np.float64), (X.shape[0],))[:, None]
        side = np.minimum(1.0, X + r) - np.maximum(0.0, X - r)
        return side.prod(axis=1)

    def prob_radius(self, X, p) -> np.ndarray:
        """Smallest radius whose closed ball has mass at least ``p``."""
        X = self._check(X)
        p = np.broadcast_to(np.asarray(p, dtype=np.float64), (X.shape[0],))
        if np.any((p <= 0) | (p > 1)):
            raise ValueError("p must lie in (0, 1]")
        if self.dim == 1:
            a = np.minimum(X[:, 0], 1.0 - X[:, 0])
            return np.where(p <= 2 * a, 0.5 * p, p - a)
        lo = np.zeros(X.shape[0])
        hi = np.ones(X.shape[0])
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if np.all((mid == lo) | (mid == hi)):
                break
            ok = self.ball_mass(X, mid) >= p
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
        return hi

    def ball_eta(self, X, r) -> np.ndarray:
        """Mean of eta over the closed ball ``B(x, r)``; ``r`` is (q,) or (q, g)."""
        X = self._check(X)
        r = np.asarray(r, dtype=np.float64)
        x0 = X[:, 0] if r.ndim < 2 else X[:, :1]
        r = np.broadcast_to(r, np.broadcast(x0, r).shape)
        if np.any(r < 0):
            raise ValueError("radius must be nonnegative")
        if np.any(r == 0):
            raise ValueError("zero-mass ball: eta is undefined on it")
        lo = np.maximum(0.0, x0 - r)
        hi = np.minimum(1.0, x0 + r)
        return _interval_mean(self.profile, lo, hi)

    # -- boundary / easy region ------------------------------------------

    def _radius_candidates(self, X: np.ndarray, rmax: np.ndarray, grid: int) -> np.ndarray:
        rel = np.geomspace(1e-6, 1.0, grid)
        radii = rmax[:, None] * rel[None, :]
        special = [0.0, 1.0, *self.profile.knots]
        brk = np.abs(X[:, :1] - np.asarray(special)[None, :])
        brk = np.where((brk > 0) & (brk < rmax[:, None]), brk, rmax[:, None])
        return np.concatenate([radii, brk, rmax[:, None]], axis=1)

    def ball_eta_extremes(self, X, p, grid: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Min and max of ``eta(B(x, r))`` over ``0 < r <= r(x; p)``, with the
        ``r -> 0`` limit ``eta(x)`` included."""
        X = self._check(X)
        grid = grid or self.radius_grid
        rmax = self.prob_radius(X, min(float(p), 1.0))
        radii = self._radius_candidates(X, rmax, grid)
        vals = self.ball_eta(X, radii)
        at0 = self.eta(X)
        return np.minimum(vals.min(axis=1), at0), np.maximum(vals.max(axis=1), at0)

    def interior_member(self, X, p, margin, grid: int | None = None) -> np.ndarray:
        """Points whose ball means stay at least ``margin`` on one side of 1/2."""
        lo, hi = self.ball_eta_extremes(X, p, grid)
        return (lo - 0.5 >= margin) | (0.5 - hi >= margin)

    def boundary_member(self, X, p, big_delta, grid: int | None = None) -> np.ndarray:
        return ~self.interior_member(X, p, big_delta, grid)

    def easy_member(self, X, consts, grid: int | None = None) -> np.ndarray:
        return self.interior_member(X, min(consts.p_n_dprime, 1.0), 5 * consts.delta_uc, grid)

    def boundary_measure(self, p, big_delta, **kw) -> float:
        closed = self._closed_form_boundary(p, big_delta)
        if closed is not None:
            return closed
        return self.measure(lambda X: self.boundary_member(X, p, big_delta), **kw)[0]

    def easy_measure(self, consts, **kw) -> float:
        return self.measure(lambda X: self.easy_member(X, consts), **kw)[0]

    def _closed_form_boundary(self, p, big_delta) -> float | None:
        return None

    def measure(self, member, grid: int = 4097, mc_points: int = 200_000,
                seed: int = 0) -> tuple[float, float]:
        """mu of ``{x : member(x)}`` and its standard error.

        One dimension: the set is located as a union of intervals by bisecting
        every membership change on a grid (standard error 0).  Otherwise
        Monte Carlo.
        """
        if self.dim == 1:
            return _interval_measure(member, grid), 0.0
        rng = np.random.default_rng(seed)
        hits = 0
        for start in range(0, mc_points, 50_000):
            X = rng.random((min(50_000, mc_points - start), self.dim))
            hits += int(np.count_nonzero(member(X)))
        est = hits / mc_points
        return est, math.sqrt(est * (1 - est) / mc_points)

    # -- certificates -----------------------------------------------------

    def open_ball_mass(self, X, r) -> np.ndarray:
        # uniform density: open and closed balls have equal mass
        return self.ball_mass(X, r)


def _interval_measure(member, grid: int) -> float:
    t = np.linspace(0.0, 1.0, grid)
    inside = np.asarray(member(t[:, None]), dtype=bool)
    change = np.flatnonzero(inside[1:] != inside[:-1])
    lo, hi = t[change].copy(), t[change + 1].copy()
    lo_in = inside[change]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mid.size == 0:
            break
        m = np.asarray(member(mid[:, None]), dtype=bool)
        same = m == lo_in
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    cuts = np.concatenate([[0.0], 0.5 * (lo + hi), [1.0]])
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    seg_in = np.asarray(member(mids[:, None]), dtype=bool)
    return float(np.sum(np.diff(cuts)[seg_in]))


class LinearEta1D(OracleDistribution):
    def _closed_form_boundary(self, p, big_delta):
        if big_delta >= 0.5 or p > 1 - 2 * big_delta:
            return 1.0
        return 2.0 * big_delta


class ConstantEta(OracleDistribution):
    def _closed_form_boundary(self, p, big_delta):
        return 0.0 if abs(self.profile.value - 0.5) >= big_delta else 1.0


FAMILIES = ("uniform1d-linear", "uniform1d-piecewise", "uniform2d-linear", "uniform-constant")


def make_distribution(name: str, **params) -> OracleDistribution:
    """Build a built-in family by name.

    ``uniform1d-linear``     eta(x) = x
    ``uniform1d-piecewise``  slope, half_height, crossing (default 0.5)
    ``uniform2d-linear``     eta(x) = x[0], l-infinity metric
    ``uniform-constant``     value, dim (default 1)

    One-dimensional families accept ``metric``; every family accepts
    ``radius_grid`` (resolution of the radius search).
    """
    key = name.lower()
    grid = int(params.pop("radius_grid", 256))
    if key == "uniform1d-linear":
        metric = params.pop("metric", "linf")
        _reject_extra(name, params)
        return LinearEta1D(key, 1, LinearProfile(), metric=metric, d_vc=2, alpha=1.0, L=1.0,
                           beta=1.0, C_margin=2.0, radius_grid=grid)
    if key == "uniform1d-piecewise":
        metric = params.pop("metric", "linf")
        prof = PiecewiseProfile(float(params.pop("slope", 10.0)),
                                float(params.pop("half_height", 0.4)),
                                float(params.pop("crossing", 0.5)))
        _reject_extra(name, params)
        return OracleDistribution(
            key, 1, prof, metric=metric, d_vc=2, alpha=1.0, L=prof.slope, beta=1.0,
            C_margin=max(2.0 / prof.slope, 1.0 / prof.half_height), radius_grid=grid,
            params={"slope": prof.slope, "half_height": prof.half_height, "crossing": prof.crossing},
        )
    if key == "uniform2d-linear":
        _reject_extra(name, params)
        # |x0 - x0'| <= rho and the open box around x has mass >= min(rho, 1)^2
        return OracleDistribution(key, 2, LinearProfile(), metric=Metric.LINF, d_vc=4,
                                  alpha=0.5, L=1.0, beta=1.0, C_margin=2.0, radius_grid=grid)
    if key == "uniform-constant":
        value = float(params.pop("value", 0.5))
        dim = int(params.pop("dim", 1))
        metric = params.pop("metric", "linf")
        _reject_extra(name, params)
        gap = abs(value - 0.5)
        beta, cm = (1.0, 1.0 / gap) if gap > 0 else (0.0, 1.0)
        # eta is flat, so any positive L certifies smoothness
        return ConstantEta(key, dim, ConstantProfile(value), metric=metric, d_vc=2 * dim,
                           alpha=1.0, L=1e-12, beta=beta, C_margin=cm, radius_grid=grid,
                           params={"value": value, "dim": dim})
    raise ValueError(f"unknown distribution family {name!r}; choose from {FAMILIES}")


def _reject_extra(name: str, params: dict) -> None:
    if params:
        raise ValueError(f"unexpected parameters for {name}: {sorted(params)}")
