import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twostage_knn.metric_space import NeighborIndex, Point, SamplePool, count_within, pairwise_distances
from twostage_knn.oracles import make_distribution
from twostage_knn.region_estimation import (
    ConstantsError,
    HyperParams,
    RegionHandle,
    augmented_member,
    big_delta,
    c_delta,
    derive_constants,
    hard_region_member,
    region_measure_positive,
    search_region,
)

E_DELTA = 2 / math.e  # ln(2 / delta) = 1
LIN = make_distribution("uniform1d-linear")


def labeled(X, labels, rng):
    X = np.asarray(X, dtype=float).reshape(-1, 1)
    return SamplePool(X, labels, rng.random(len(X)), np.zeros(len(X)), np.arange(len(X)))


def linear_round1(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 1))
    return labeled(X, (rng.random(n) < X[:, 0]).astype(int), rng)


def test_constant_examples():
    assert c_delta(16, E_DELTA) == pytest.approx(2.0, abs=1e-12)
    assert big_delta(4, E_DELTA) == 0.5
    c = derive_constants(HyperParams(k=16, n=100, m=10, delta=E_DELTA, c1=1.0, d_vc=1))
    # independent evaluation: ceil(2 * 16 + sqrt(100 * (ln(2e) + 1))) - 1
    assert c.k_bar == math.ceil(32 + math.sqrt(100 * (math.log(2 * math.e) + 1))) - 1 == 48


def test_constant_formulas():
    p = HyperParams(k=60, n=1000, m=1000, delta=0.2, zeta=0.5, c0=0.7, c1=0.3, c2=2.0, d_vc=3)
    c = derive_constants(p)
    cd = 1 / (1 - math.sqrt(4 / 60 * math.log(10)))
    assert c.c_delta == pytest.approx(cd, rel=1e-15)
    assert c.delta_uc == pytest.approx(0.7 * math.sqrt((3 * math.log(1000) + math.log(5)) / 60))
    assert c.k_bar == math.ceil(cd * 1.5 * 60 + 0.3 * math.sqrt(1000 * (math.log(20) + 3))) - 1
    slack = 2.0 * math.sqrt((3 + math.log(5)) / 1000)
    assert c.p_n == pytest.approx(cd * 60 / 1000)
    assert c.p_n_prime == pytest.approx(0.06 + slack)
    assert c.p_n_dprime == pytest.approx(c.k_bar / 1000 + slack)
    assert c.k_bar >= p.k and c.c_delta > 1
    assert derive_constants(p) == c


def test_constant_errors():
    with pytest.raises(ConstantsError, match="c_delta undefined"):
        derive_constants(HyperParams(k=4, n=100, m=10, delta=E_DELTA))
    with pytest.raises(ConstantsError, match="k_bar < n"):
        derive_constants(HyperParams(k=60, n=100, m=10, delta=0.2))
    with pytest.raises(ValueError):
        HyperParams(k=10, n=10, m=0, delta=0.2)
    with pytest.raises(ValueError):
        HyperParams(k=1, n=10, m=0, delta=1.0)


def small_handle(labels, X=None, witnesses=None, c0=0.05, seed=0):
    rng = np.random.default_rng(seed)
    X = np.linspace(0.01, 0.99, len(labels)) if X is None else X
    r1 = labeled(X, labels, rng)
    params = HyperParams(k=6, n=len(labels), m=10, delta=0.9, c0=c0, c1=0.05, d_vc=1)
    w = rng.random((50, 1)) if witnesses is None else witnesses
    return RegionHandle(r1, params, w, metric="l2")


def test_hard_region_exact_half_vote():
    labels = np.tile([0, 1], 20)
    h = small_handle(labels)
    assert hard_region_member(h, Point((0.5,)))


def test_hard_region_unanimous_vote_excluded():
    h = small_handle(np.ones(40, dtype=int))
    assert 3 * h.consts.delta_uc < 0.5
    assert not hard_region_member(h, [0.3])
    assert h.hard_witness_count == 0
    # no hard witnesses at all: the augmented region is empty
    assert not augmented_member(h, [0.3])


def test_hard_region_concentrates_near_half():
    r1 = linear_round1(2000, 1)
    params = HyperParams(k=60, n=2000, m=10, delta=0.2, c0=0.1)
    h = RegionHandle(r1, params, np.random.default_rng(2).random((1000, 1)), metric="l2")
    grid = (np.arange(1000) + 0.5) / 1000
    hard = h.in_hard_region(grid[:, None])
    assert hard[(grid > 0.45) & (grid < 0.55)].all()
    assert not hard[(grid < 0.15) | (grid > 0.85)].any()


def test_self_witness():
    labels = np.tile([0, 1], 20)
    h = small_handle(labels, witnesses=np.array([[0.0]]))
    x = np.array([[0.5]])
    assert h.in_hard_region(x)[0] and h.augmented_radius(x)[0] > 0
    assert augmented_member(h, x)


def test_open_ball_excludes_far_points():
    # labels switch at 1/2, so the witness at 0.5 is the only hard point
    X = np.linspace(0.0, 1.0, 41)
    labels = (X >= 0.5).astype(int)
    h = small_handle(labels, X=X, witnesses=np.array([[0.5]]), c0=0.1)
    assert h.hard_witness_count == 1
    R = h.augmented_radius([[0.5]])[0]
    inside, edge, outside = 0.5 - 0.8 * R, 0.5 + R, 0.5 + R + 0.01
    for x in (inside, edge, outside):
        assert not hard_region_member(h, [x])
    assert augmented_member(h, [inside])
    # at distance exactly R the count already exceeds k_bar: outside the open ball
    assert count_within("l2", h.round1, Point((0.5,)), R) > h.consts.k_bar
    assert not augmented_member(h, [edge])
    assert not augmented_member(h, [outside])


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_open_ball_count_equivalence(seed, kbar):
    rng = np.random.default_rng(seed)
    n = 45
    pool = labeled(np.round(rng.random(n) * 20) / 20, rng.integers(0, 2, n), rng)
    idx = NeighborIndex(pool, "l2", "brute")
    for _ in range(5):
        center, x = np.round(rng.random((2, 1, 1)) * 20) / 20
        _, d = idx.kneighbors(center, kbar + 1)
        rho = pairwise_distances("l2", center, x)[0, 0]
        inside = rho < d[0, -1]
        assert inside == (idx.count_within(center, rho)[0] <= kbar)


def brute_augmented(h, X):
    """Augmented membership from the count form over {x} and the witness pool."""
    out = []
    W = h.witness_pool
    w_hard = h.in_hard_region(W)
    kb = h.consts.k_bar
    for x in X:
        x = x[None]
        if h.in_hard_region(x)[0] and h.augmented_radius(x)[0] > 0:
            out.append(True)
            continue
        hit = False
        for w in W[w_hard]:
            rho = pairwise_distances(h.metric, w[None], x)[0, 0]
            if count_within(h.metric, h.round1, Point(tuple(w)), rho) <= kb:
                hit = True
                break
        out.append(hit)
    return np.array(out)


def test_augmented_matches_count_form():
    r1 = linear_round1(300, 3)
    params = HyperParams(k=20, n=300, m=10, delta=0.5, c0=0.1, c1=0.2, d_vc=2)
    h = RegionHandle(r1, params, np.random.default_rng(4).random((300, 1)), metric="l2")
    X = np.random.default_rng(5).random((150, 1))
    np.testing.assert_array_equal(h.in_augmented_region(X), brute_augmented(h, X))


def test_monotone_in_c0_and_zeta():
    r1 = linear_round1(1000, 6)
    W = np.random.default_rng(7).random((2000, 1))
    grid = np.linspace(0, 1, 501)[:, None]
    base = HyperParams(k=40, n=1000, m=10, delta=0.2, c0=0.05)
    handles = [RegionHandle(r1, base.with_(c0=c), W, metric="l2") for c in (0.05, 0.1, 0.2)]
    hard = [h.in_hard_region(grid) for h in handles]
    for a, b in zip(hard, hard[1:]):
        assert not np.any(a & ~b)
    aug = [RegionHandle(r1, base.with_(zeta=z), W, metric="l2").in_augmented_region(grid)
           for z in (0.0, 0.5, 1.0)]
    for a, b in zip(aug, aug[1:]):
        assert not np.any(a & ~b)


class IntervalRegion:
    def __init__(self, lo, hi):
        self.lo, self.hi = lo, hi

    def in_augmented_region(self, X):
        return (X[:, 0] > self.lo) & (X[:, 0] < self.hi)


def test_positivity_search():
    region = IntervalRegion(0.4, 0.6)
    assert all(region_measure_positive(region, 200, LIN, np.random.default_rng(s)) for s in range(50))
    assert not region_measure_positive(region, 0, LIN, np.random.default_rng(0))
    found, used = search_region(IntervalRegion(0.0, 0.0), 500, LIN, np.random.default_rng(0))
    assert not found and used == 500
    empty = small_handle(np.ones(40, dtype=int))
    assert not region_measure_positive(empty, 1000, LIN, np.random.default_rng(1))


def test_handle_validation():
    r1 = linear_round1(50, 0)
    params = HyperParams(k=5, n=60, m=10, delta=0.5, c1=0.1)
    with pytest.raises(ValueError):
        RegionHandle(r1, params, np.random.default_rng(0).random((10, 1)))
    with pytest.raises(ValueError):
        RegionHandle(r1, params.with_(n=50), np.empty((0, 1)))
