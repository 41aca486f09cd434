import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twostage_knn.metric_space import (
    AugmentedPoint,
    LabeledSample,
    Metric,
    NeighborIndex,
    Point,
    Provenance,
    SamplePool,
    count_within,
    distance,
    knn_query,
)


def sample(coords, tb, label=0, sid=-1):
    return LabeledSample(AugmentedPoint(Point(tuple(coords)), tb), label, Provenance.ROUND1, sid)


def random_pool(rng, n, dim=1, quantize=None):
    X = rng.random((n, dim))
    if quantize:
        X = np.round(X * quantize) / quantize
    return SamplePool(X, rng.integers(0, 2, n), rng.random(n), np.zeros(n), np.arange(n))


@pytest.mark.parametrize("metric,a,b,expected", [
    (Metric.LINF, (0, 0), (3, 4), 4.0),
    (Metric.L2, (0, 0), (3, 4), 5.0),
    (Metric.L1, (1, 1), (1, 1), 0.0),
    (Metric.L1, (0, 0), (3, 4), 7.0),
])
def test_distance_examples(metric, a, b, expected):
    assert distance(metric, Point(a), Point(b)) == expected


def test_distance_dimension_mismatch():
    with pytest.raises(ValueError):
        distance("l2", Point((0.0,)), Point((0.0, 1.0)))


def test_point_rejects_nonfinite():
    with pytest.raises(ValueError):
        Point((0.0, float("nan")))
    with pytest.raises(ValueError):
        AugmentedPoint(Point((0.0,)), 1.5)


def test_label_must_be_binary():
    with pytest.raises(ValueError):
        sample((0.1,), 0.5, label=2)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=9, max_size=9),
       st.sampled_from(list(Metric)))
def test_metric_axioms(vals, metric):
    a, b, c = (Point(tuple(vals[i:i + 3])) for i in (0, 3, 6))
    ab, bc, ac = distance(metric, a, b), distance(metric, b, c), distance(metric, a, c)
    assert ab == distance(metric, b, a)
    assert ac <= ab + bc + 1e-12
    assert distance(metric, a, a) == 0.0


def test_knn_query_returns_closest_in_order():
    pool = [sample((0.3,), 0.1, sid=0), sample((0.1,), 0.9, sid=1), sample((0.2,), 0.5, sid=2)]
    got = knn_query("l2", pool, Point((0.0,)), 2)
    assert [s.sample_id for s in got] == [1, 2]


def test_knn_query_tie_goes_to_lower_tiebreak():
    pool = [sample((0.4,), 0.7, sid=0), sample((0.6,), 0.2, sid=1)]
    got = knn_query("l1", pool, Point((0.5,)), 1)
    assert got[0].sample_id == 1


def test_knn_query_errors():
    pool = [sample((0.4,), 0.7, sid=0)]
    with pytest.raises(ValueError):
        knn_query("l2", pool, Point((0.5,)), 2)
    with pytest.raises(ValueError):
        knn_query("l2", [], Point((0.5,)), 1)


def test_knn_query_permutation_invariant_exhaustive():
    rng = np.random.default_rng(3)
    # quantized coordinates force distance ties that only tiebreaks resolve
    base = random_pool(rng, 7, dim=1, quantize=4).to_samples()
    x = Point((0.5,))
    ref = [s.sample_id for s in knn_query("linf", base, x, 5)]
    for perm in itertools.permutations(base):
        assert [s.sample_id for s in knn_query("linf", list(perm), x, 5)] == ref


def test_knn_query_random_permutations_of_ten():
    rng = np.random.default_rng(4)
    base = random_pool(rng, 10, dim=2, quantize=3).to_samples()
    x = Point((0.4, 0.6))
    ref = [s.sample_id for s in knn_query("l2", base, x, 5)]
    for _ in range(200):
        perm = [base[i] for i in rng.permutation(10)]
        assert [s.sample_id for s in knn_query("l2", perm, x, 5)] == ref


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(Metric)))
def test_full_ordering_nondecreasing_and_total(seed, metric):
    rng = np.random.default_rng(seed)
    pool = random_pool(rng, 20, dim=2, quantize=5)
    x = rng.random((1, 2))
    idx, d = NeighborIndex(pool, metric, "brute").kneighbors(x, len(pool))
    assert np.all(np.diff(d[0]) >= 0)
    keys = list(zip(d[0], pool.tiebreak[idx[0]]))
    assert keys == sorted(keys)
    assert len(set(keys)) == len(keys)
    counts = NeighborIndex(pool, metric).count_within(np.repeat(x, len(pool), 0), d[0])
    assert np.all(counts >= np.arange(1, len(pool) + 1))


def test_count_within_examples():
    rng = np.random.default_rng(5)
    pool = random_pool(rng, 100)
    center = Point((0.5,))
    assert count_within("l2", pool, Point((2.0,)), 0.0) == 0
    assert count_within("l2", pool, center, 1.0) == 100
    brute = sum(abs(p - 0.5) <= 0.1 for p in pool.points[:, 0])
    assert count_within("l2", pool, center, 0.1) == brute
    assert count_within("l2", [], center, 0.3) == 0


def test_count_within_dimension_mismatch():
    pool = random_pool(np.random.default_rng(0), 5, dim=2)
    with pytest.raises(ValueError):
        count_within("l2", pool, Point((0.5,)), 0.1)


@pytest.mark.parametrize("metric", list(Metric))
@pytest.mark.parametrize("dim,quantize", [(1, None), (2, None), (1, 50), (3, 4)])
def test_kdtree_matches_brute(metric, dim, quantize):
    rng = np.random.default_rng(dim * 10 + (quantize or 0))
    pool = random_pool(rng, 500, dim=dim, quantize=quantize)
    Q = rng.random((300, dim))
    if quantize:
        Q = np.round(Q * quantize) / quantize
    for k in (1, 7, 60, 499):
        bi, bd = NeighborIndex(pool, metric, "brute").kneighbors(Q, k)
        ki, kd = NeighborIndex(pool, metric, "kdtree").kneighbors(Q, k)
        np.testing.assert_array_equal(bi, ki)
        np.testing.assert_array_equal(bd, kd)


def test_pool_round_trip_and_concat():
    rng = np.random.default_rng(9)
    pool = random_pool(rng, 6, dim=2)
    back = SamplePool.from_samples(pool.to_samples())
    np.testing.assert_array_equal(back.points, pool.points)
    np.testing.assert_array_equal(back.ids, pool.ids)
    both = SamplePool.concat([pool, SamplePool.empty(2)])
    assert len(both) == 6
