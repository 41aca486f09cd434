"""Monte-Carlo estimators and diagnostic checks against the oracles.

Frequencies over seeds are compared with their theoretical ceilings using a
binomial three-sigma slack, see :func:`frequency_within`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, NamedTuple

import numpy as np

from .active_sampling import Streams, draw_labeled
from .knn_core import KNNClassifier
from .metric_space import NeighborIndex, Provenance
from .region_estimation import (
    DerivedConstants,
    HyperParams,
    RegionHandle,
    big_delta,
    c_delta,
)


class Estimate(NamedTuple):
    value: float
    se: float


@dataclass
class TrialRecord:
    """One row of ``trials.csv``.  Metrics a suite does not compute stay NaN
    (or ``None`` for the containment flags)."""

    suite: str
    schedule_index: int
    trial_index: int
    seed: str
    n: int
    m: int
    k: int
    status: str = "ok"
    skip_reason: str = ""
    disagreement_active: float = math.nan
    disagreement_passive: float = math.nan
    excess_risk_active: float = math.nan
    boundary_mass_bound: float = math.nan
    easy_mass: float = math.nan
    containment_lemma1: bool | None = None
    containment_lemma9: bool | None = None
    bv_event_rate: float = math.nan
    nl_event_rate: float = math.nan
    labels_used: int = 0

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return asdict(self)


Classifier = Callable[[np.ndarray], np.ndarray]


def _draw(dist, mc_points: int, seed) -> np.ndarray:
    if mc_points < 1:
        raise ValueError("mc_points must be at least 1")
    return dist.sample_instances(mc_points, np.random.default_rng(seed))


def disagreement_on(classifier: Classifier, dist, X: np.ndarray) -> np.ndarray:
    return np.asarray(classifier(X)) != dist.bayes_classify(X)


def estimate_disagreement(classifier: Classifier, dist, mc_points: int, seed) -> Estimate:
    """Fraction of fresh draws where ``classifier`` and the Bayes rule differ."""
    hits = disagreement_on(classifier, dist, _draw(dist, mc_points, seed))
    p = float(hits.mean())
    return Estimate(p, math.sqrt(p * (1 - p) / len(hits)))


def estimate_excess_risk(classifier: Classifier, dist, mc_points: int, seed) -> Estimate:
    """MC mean of ``|2 eta(X) - 1| * 1{classifier(X) != g*(X)}``."""
    X = _draw(dist, mc_points, seed)
    vals = np.abs(2 * dist.eta(X) - 1) * disagreement_on(classifier, dist, X)
    return Estimate(float(vals.mean()), float(vals.std(ddof=0) / math.sqrt(len(vals))))


def frequency_within(count: int, total: int, ceiling: float, sigmas: float = 3.0) -> bool:
    """``count / total <= ceiling + sigmas * sqrt(ceiling (1 - ceiling) / total)``."""
    slack = sigmas * math.sqrt(max(ceiling * (1 - ceiling), 0.0) / total)
    return count / total <= ceiling + slack


# -- containment -------------------------------------------------------------

def default_grid(dist, size: int | None = None) -> np.ndarray:
    """Cell-midpoint grid: 1000 points in 1-D, 64 x 64 in 2-D."""
    if dist.dim == 1:
        size = size or 1000
        return ((np.arange(size) + 0.5) / size)[:, None]
    side = size or 64
    axes = [(np.arange(side) + 0.5) / side] * dist.dim
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dist.dim)


def boundary_containment_applies(dist, consts: DerivedConstants) -> bool:
    return 2 * dist.L * consts.p_n_prime ** dist.alpha <= consts.delta_uc


def region_containment_applies(dist, consts: DerivedConstants) -> bool:
    return 3 * dist.L * consts.p_n_dprime ** dist.alpha <= consts.delta_uc


def check_boundary_containment(handle: RegionHandle, dist, grid: np.ndarray | None = None,
                               force: bool = False) -> bool | None:
    """Whether every grid point of the effective boundary at scale
    ``c_delta k / n`` lies in the hard region.

    Returns ``None`` (not applicable) when the smoothness precondition fails,
    unless ``force``.  The grid can miss violations between its points.
    """
    consts = handle.consts
    if not force and not boundary_containment_applies(dist, consts):
        return None
    grid = default_grid(dist) if grid is None else grid
    on_boundary = dist.boundary_member(grid, min(consts.p_n, 1.0), consts.big_delta)
    if not on_boundary.any():
        return True
    return bool(handle.in_hard_region(grid[on_boundary]).all())


def check_region_containment(handle: RegionHandle, dist, grid: np.ndarray | None = None,
                             force: bool = False) -> bool | None:
    """Whether no grid point is both in the augmented region and easy."""
    consts = handle.consts
    if not force and not region_containment_applies(dist, consts):
        return None
    grid = default_grid(dist) if grid is None else grid
    easy = dist.easy_member(grid, consts)
    if not easy.any():
        return True
    return not bool(handle.in_augmented_region(grid[easy]).any())


# -- event rates ---------------------------------------------------------------

@dataclass(frozen=True)
class EventRates:
    bv_rate: float
    nl_rate: float
    bv_bound: float
    nl_bound: float
    trials: int
    pool_size: int
    prob: float


def estimate_event_rates(dist, params: HyperParams, fixed_x, trials: int, seed,
                         gamma: float = 0.5, pool_size: int | None = None) -> EventRates:
    """Frequencies of the bad-vote and non-locality events at ``fixed_x``.

    Each trial draws ``pool_size`` (default ``n + floor(pi m)``) labeled
    points from P.  Bad vote: the k-NN vote differs from the mean of eta over
    the closed ball reaching the (k+1)-th neighbor by at least
    ``min(1/2, sqrt(ln(2/delta)/k))``.  Non-locality: the (k+1)-th neighbor
    lies farther than ``r(x; p)`` with ``p = k / ((1 - gamma) pool_size)``,
    capped at 1.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    x = np.atleast_2d(np.asarray(fixed_x, dtype=np.float64))
    k = params.k
    size = pool_size or params.n + math.floor(params.pi * params.m)
    if size <= k:
        raise ValueError("pool must hold more than k points")
    gap = big_delta(k, params.delta)
    prob = 1.0 if gamma >= 1 else min(1.0, k / ((1 - gamma) * size))
    r_p = float(dist.prob_radius(x, prob)[0])
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    bad = far = 0
    for child in root.spawn(trials):
        pool = draw_labeled(dist, size, Streams(child), "round1", Provenance.ROUND1)
        idx, dist_k = NeighborIndex(pool, dist.metric, "brute").kneighbors(x, k + 1)
        vote = pool.labels[idx[0, :k]].mean()
        radius = dist_k[0, k]
        # votes are multiples of 1/k; absorb rounding so an exact tie with
        # the gap counts as an event
        if abs(vote - float(dist.ball_eta(x, radius)[0])) >= gap - 1e-12:
            bad += 1
        if radius > r_p:
            far += 1
    return EventRates(bad / trials, far / trials, 2 * math.exp(-2 * k * gap ** 2),
                      math.exp(-k * gamma ** 2 / 2), trials, size, prob)


# -- shattering by augmented l-infinity balls ---------------------------------

def augmented_ball_contains(x: np.ndarray, z: np.ndarray, center, radius, z_cut) -> np.ndarray:
    """Membership in ``{(x, z) : |x - c| < r, or |x - c| = r and z < z_cut}``."""
    d = np.abs(np.asarray(x, dtype=np.float64) - center)
    if d.ndim > 1:
        d = d.max(axis=-1)
    return (d < radius) | ((d == radius) & (z < z_cut))


def realizable_labelings(x: np.ndarray, z: np.ndarray) -> set[tuple[bool, ...]]:
    """Subsets of 1-D augmented points cut out by canonical augmented balls.

    Centers and radii come from point pairs: the ball through ``x_a`` and
    ``x_b``, and the same ball widened by a sliver on one side so only one
    boundary carries sample points.  Threshold candidates are 0, 1 and every
    z value; together these realize every labeling any augmented interval can.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    xs = np.unique(x)
    gaps = np.diff(xs)
    eps = (gaps.min() / 4) if len(gaps) else 1e-9
    cuts = np.unique(np.concatenate([[0.0, 1.0], z, np.nextafter(z, 2.0)]))
    balls = []
    for a, b in itertools.combinations_with_replacement(xs, 2):
        c, r = 0.5 * (a + b), 0.5 * (b - a)
        balls += [(c, r), (c - eps, r + eps), (c + eps, r + eps)]
    out = set()
    for c, r in balls:
        d = np.abs(x - c)
        inner = d < r
        edge = d == r
        for zc in cuts:
            out.add(tuple(bool(v) for v in inner | (edge & (z < zc))))
    return out


def is_shattered(x, z) -> bool:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return len(realizable_labelings(x, z)) == 2 ** len(x)


def vc_shatter_check(dim: int, num_points: int, trials: int, seed) -> bool:
    """Whether any of ``trials`` random augmented point sets is shattered."""
    if dim != 1:
        raise NotImplementedError("shattering search is implemented for dim = 1 only")
    if num_points < 1:
        raise ValueError("num_points must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        if is_shattered(rng.random(num_points), rng.random(num_points)):
            return True
    return False


# -- passive baseline ---------------------------------------------------------

def passive_bound(dist, N: int, k: int, delta: float) -> float:
    """``mu(boundary at p = c_delta k / N, big_delta) + delta``."""
    p = min(1.0, c_delta(k, delta) * k / N)
    return dist.boundary_measure(p, big_delta(k, delta)) + delta


def run_passive_baseline(dist, n_plus_m: int, k: int, mc_points: int, seed,
                         delta: float = 0.2, eval_points: np.ndarray | None = None) -> dict:
    """k-NN on ``n_plus_m`` i.i.d. labels, scored against the Bayes rule.

    Scoring uses ``eval_points`` when given (to pair with another learner),
    otherwise ``mc_points`` fresh draws from the seed's evaluation stream.
    """
    if k >= n_plus_m:
        raise ValueError("k must be smaller than the sample size")
    streams = Streams(seed)
    pool = draw_labeled(dist, n_plus_m, streams, "round1", Provenance.ROUND1)
    clf = KNNClassifier(pool, k, dist.metric)
    X = eval_points if eval_points is not None else _draw(dist, mc_points, streams["evaluation"])
    wrong = disagreement_on(clf, dist, X)
    return {
        "disagreement_passive": float(wrong.mean()),
        "excess_risk_passive": float((np.abs(2 * dist.eta(X) - 1) * wrong).mean()),
        "boundary_mass_bound": passive_bound(dist, n_plus_m, k, delta),
        "labels_used": n_plus_m,
    }


def active_bound(dist, params: HyperParams, easy_mass: float) -> float:
    """``mu(boundary at p', big_delta) + delta`` where
    ``p' = c_{delta/sqrt 2} k mu(not easy) / ((1 - pi) m)``, capped at 1."""
    k, delta = params.k, params.delta
    budget = (1 - params.pi) * params.m
    hard_mass = max(0.0, 1.0 - easy_mass)
    if budget <= 0:
        p = 1.0
    else:
        p = min(1.0, c_delta(k, delta / math.sqrt(2)) * k * hard_mass / budget)
    return dist.boundary_measure(p, big_delta(k, delta)) + delta


def paired_bootstrap_upper(diffs, level: float = 0.95, resamples: int = 10_000,
                           seed=0) -> float:
    """One-sided upper confidence bound on the mean of paired differences."""
    diffs = np.asarray(diffs, dtype=np.float64)
    if diffs.size == 0:
        raise ValueError("no paired differences")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, diffs.size, size=(resamples, diffs.size))
    return float(np.quantile(diffs[idx].mean(axis=1), level))
