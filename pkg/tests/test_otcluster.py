import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerated_w2, integer_plans
from regimevol.otcluster import (AllDistancesZero, DistanceMatrix, SegmentDistribution, canonical_labels,
                                 KernelMatrix, kernelize, pairwise_w2, project_labels, spectral_cluster, w2_squared)
from regimevol.segment import SegmentSet
from regimevol.transport import transport_simplex, uniform_plan


def test_small_examples():
    assert w2_squared(SegmentDistribution([0.0]), SegmentDistribution([3.0])) == 9.0
    assert w2_squared(SegmentDistribution([0.0, 2.0]), SegmentDistribution([1.0, 3.0])) == pytest.approx(1.0)
    A = SegmentDistribution(np.random.default_rng(0).normal(size=(7, 3)))
    assert w2_squared(A, A) == pytest.approx(0.0, abs=1e-12)


def test_matches_plan_enumeration_and_quantile_coupling(rng):
    for _ in range(200):
        m, n, d = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 4)
        A, B = rng.normal(size=(m, d)), rng.normal(size=(n, d))
        got = w2_squared(SegmentDistribution(A), SegmentDistribution(B))
        assert got == pytest.approx(enumerated_w2(A, B), abs=1e-10)
    for _ in range(200):
        k = rng.integers(1, 60)
        a, b = rng.normal(size=k), rng.normal(2.0, 3.0, size=k)
        closed = np.mean((np.sort(a) - np.sort(b)) ** 2)
        assert w2_squared(SegmentDistribution(a), SegmentDistribution(b)) == pytest.approx(closed, abs=1e-10)


def test_simplex_plan_is_feasible(rng):
    C = rng.random((17, 11))
    plan, cost = uniform_plan(C)
    np.testing.assert_allclose(plan.sum(axis=1), 1 / 17, atol=1e-15)
    np.testing.assert_allclose(plan.sum(axis=0), 1 / 11, atol=1e-15)
    assert cost == pytest.approx(np.sum(plan * C), abs=1e-14)
    flow, pivots = transport_simplex(np.full(3, 2, dtype=np.int64), np.full(2, 3, dtype=np.int64),
                                     np.zeros((3, 2)), 100)
    assert pivots >= 0 and flow.sum() == 6


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    segs = [SegmentDistribution(rng.normal(rng.normal(), 1 + rng.random(), size=(rng.integers(2, 9), 2)))
            for _ in range(3)]
    d = lambda a, b: np.sqrt(w2_squared(a, b))
    assert d(segs[0], segs[2]) <= d(segs[0], segs[1]) + d(segs[1], segs[2]) + 1e-6


def test_cap_subsamples_by_stride():
    pts = np.arange(450.0)
    capped = SegmentDistribution(pts).capped(200)
    np.testing.assert_array_equal(capped.ravel(), pts[::3])


def test_kernel_examples():
    sigma = 0.7
    W = DistanceMatrix(np.array([[0.0, 2 * sigma**2], [2 * sigma**2, 0.0]]))
    assert kernelize(W, sigma).values[0, 1] == pytest.approx(np.exp(-1))
    with pytest.raises(AllDistancesZero):
        kernelize(DistanceMatrix(np.zeros((3, 3))))
    rng = np.random.default_rng(1)
    D = rng.random((5, 5))
    D = (D + D.T) / 2
    np.fill_diagonal(D, 0)
    K1, K2 = kernelize(DistanceMatrix(D), 0.5).values, kernelize(DistanceMatrix(D), 1.0).values
    off = ~np.eye(5, dtype=bool)
    assert np.all(K2[off] > K1[off])


def test_median_bandwidth():
    D = np.array([[0, 1, 4], [1, 0, 9], [4, 9, 0]], dtype=float)
    assert kernelize(DistanceMatrix(D)).sigma == 2.0


def block_kernel(sizes, within=0.99, across=0.01):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    K = np.where(labels[:, None] == labels[None, :], within, across)
    np.fill_diagonal(K, 1.0)
    return K, labels


def test_spectral_recovers_blocks():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        K, truth = block_kernel([rng.integers(2, 8), rng.integers(2, 8)])
        perm = rng.permutation(len(truth))
        got = spectral_cluster(KernelMatrix(K[np.ix_(perm, perm)], 1.0), 2, seed)
        np.testing.assert_array_equal(got, canonical_labels(truth[perm]))
    assert np.all(spectral_cluster(KernelMatrix(K, 1.0), 1) == 1)


def test_pairwise_is_symmetric_with_zero_diagonal(rng):
    segs = [SegmentDistribution(rng.normal(size=(rng.integers(3, 8), 2))) for _ in range(4)]
    W = pairwise_w2(segs).values
    np.testing.assert_array_equal(W, W.T)
    np.testing.assert_array_equal(np.diag(W), 0)


def test_project_labels():
    one = SegmentSet((), 12, 5)
    np.testing.assert_array_equal(project_labels(one, [1]), np.ones(12))
    two = SegmentSet((10,), 20, 5)
    lab = project_labels(two, [1, 2])
    np.testing.assert_array_equal(lab, np.r_[np.ones(10), np.full(10, 2)])
    assert len(lab) == sum(len(s) for s in two.segments)


def test_canonical_labels():
    np.testing.assert_array_equal(canonical_labels([3, 3, 0, 1, 0]), [1, 1, 2, 3, 2])


def test_plan_enumeration_counts():
    assert len(integer_plans(5, 5)) == math.factorial(5)
    P = integer_plans(2, 3)
    np.testing.assert_allclose(P.sum(axis=2), 1 / 2)
    np.testing.assert_allclose(P.sum(axis=1), 1 / 3)
