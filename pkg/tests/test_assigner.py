import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dawsol import kernels
from dawsol.assigner import (
    AnchorCache,
    DegenerateInputError,
    assign_and_sample,
    get_anchors,
    kmeans3,
    update_cache,
)
from dawsol.core import ClassMask, seeded_rng


def mask(k, K=4):
    return ClassMask.one_hot(k, K)


# --- get_anchors -------------------------------------------------------------


def test_fresh_class_anchor_is_source_plus_offset():
    cache = AnchorCache.create(5, 4, epsilon_scale=1e-3)
    v = np.arange(5.0)
    a_u, a_t = get_anchors(cache, mask(3), v, seeded_rng(0))
    assert np.array_equal(a_u, np.zeros(5))
    assert np.max(np.abs(a_t - v)) <= 1e-3
    assert not np.array_equal(a_t, v)
    assert cache.initialized[3] and cache.seen_count[3] == 0


def test_updated_class_anchor_is_read_only():
    cache = AnchorCache.create(3, 4)
    cache.M[:, 2] = [1.0, 2.0, 3.0]
    cache.seen_count[1] = 4
    cache.initialized[1] = True
    _, a_t = get_anchors(cache, mask(1), np.array([9.0, 9.0, 9.0]), seeded_rng(0))
    assert np.array_equal(a_t, [1.0, 2.0, 3.0])
    assert np.array_equal(cache.M[:, 2], [1.0, 2.0, 3.0])


def test_distinct_classes_get_distinct_columns():
    cache = AnchorCache.create(2, 4)
    rng = seeded_rng(1)
    _, a0 = get_anchors(cache, mask(0), np.array([1.0, 0.0]), rng)
    _, a1 = get_anchors(cache, mask(1), np.array([0.0, 1.0]), rng)
    assert not np.allclose(a0, a1)
    assert np.allclose(cache.M[:, 1], a0) and np.allclose(cache.M[:, 2], a1)


def test_second_fetch_before_update_does_not_reinitialize():
    cache = AnchorCache.create(2, 2)
    rng = seeded_rng(1)
    _, first = get_anchors(cache, mask(0, 2), np.array([1.0, 1.0]), rng)
    _, second = get_anchors(cache, mask(0, 2), np.array([5.0, 5.0]), rng)
    assert np.array_equal(first, second)


# --- kmeans3 -----------------------------------------------------------------


def test_kmeans_hand_case():
    pts = np.array([[0.0, 0.1, 5.0, 5.1, 10.0]])
    labels, centers, _, _ = kmeans3(pts, np.array([[0.0, 5.0, 10.0]]))
    assert labels.tolist() == [0, 0, 1, 1, 2]
    np.testing.assert_allclose(centers[0], [0.05, 5.05, 10.0], atol=1e-12)


def test_kmeans_fixed_point():
    init = np.array([[0.0, 3.0, 7.0], [1.0, -1.0, 2.0]])
    labels, centers, _, iters = kmeans3(init.copy(), init)
    assert labels.tolist() == [0, 1, 2]
    assert np.array_equal(centers, init)
    assert iters == 1  # one pass, zero movement


def test_kmeans_all_points_identical():
    pts = np.full((2, 6), 3.0)
    init = np.full((2, 3), 1.0)
    labels, centers, _, _ = kmeans3(pts, init)
    # every point ties across the three equal centers -> cluster 0; the two
    # emptied clusters are re-seeded at the farthest point (index 0 on ties)
    assert labels.tolist() == [0] * 6
    assert np.array_equal(centers, np.full((2, 3), 3.0))


def test_kmeans_empty_cluster_reseeded_to_farthest_point():
    pts = np.array([[0.0, 1.0, 2.0, 10.0]])
    init = np.array([[0.0, 100.0, 10.0]])
    labels, centers, _, _ = kmeans3(pts, init, max_iters=1)
    # iteration 1: cluster 1 empty -> re-seeded at the point farthest from 100 (x = 0)
    assert centers[0, 1] == 0.0


def test_kmeans_rejects_fewer_than_three_points():
    with pytest.raises(DegenerateInputError):
        kmeans3(np.zeros((4, 2)), np.zeros((4, 3)))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 64), c=st.integers(1, 8))
def test_kmeans_properties(seed, n, c):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(c, n)) * rng.uniform(0.1, 5)
    init = pts[:, rng.choice(n, 3, replace=False)] + rng.normal(scale=0.1, size=(c, 3))
    labels, centers, history, _ = kmeans3(pts, init)
    d = ((pts[:, :, None] - centers[:, None, :]) ** 2).sum(0)
    assert np.all(d[np.arange(n), labels] <= d.min(1) + 1e-12)
    assert np.all(np.diff(history) <= 1e-9 * max(1.0, history[0]))


@pytest.mark.parametrize("seed", range(20))
def test_numba_and_numpy_lloyd_agree(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(40, 6))
    init = rng.normal(size=(3, 6))
    a = kernels.lloyd3_numba(pts, init, 50, 1e-4)
    b = kernels.lloyd3_numpy(pts, init, 50, 1e-4)
    assert np.array_equal(a[0], b[0])
    np.testing.assert_allclose(a[1], b[1], atol=1e-12)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-12)
    assert a[3] == b[3]


# --- assign_and_sample ---------------------------------------------------------


def _clustered(sizes, c=4, seed=0):
    rng = np.random.default_rng(seed)
    means = [np.zeros(c), np.full(c, 5.0), np.full(c, 10.0)]
    cols = [means[j][:, None] + 0.01 * rng.normal(size=(c, s)) for j, s in enumerate(sizes)]
    return np.concatenate(cols, axis=1)


def test_sample_sizes_follow_min_rule():
    Z = _clustered((100, 80, 16))
    cache = AnchorCache.create(4, 2)
    cache.M[:, 1] = 5.0
    cache.seen_count[0] = 1
    cache.initialized[0] = True
    s = assign_and_sample(Z, np.full(4, 10.0), cache, mask(0, 2), 32, seeded_rng(0))
    assert [len(x) for x in s.subsets()] == [32, 32, 16]
    for j, idx in enumerate(s.subsets()):
        assert np.all(s.labels[idx] == j)


def test_sample_everything_when_n_equals_N():
    rng = np.random.default_rng(4)
    Z = rng.normal(size=(8, 196))
    cache = AnchorCache.create(8, 3)
    s = assign_and_sample(Z, Z.mean(1), cache, mask(1, 3), 196, seeded_rng(0))
    allidx = np.concatenate(s.subsets())
    assert sorted(allidx.tolist()) == list(range(196))
    # labels partition [0, N)
    assert set(np.unique(s.labels)) <= {0, 1, 2}
    assert sum(np.sum(s.labels == j) for j in range(3)) == 196


def test_background_near_zero_is_universum():
    # 6x6 feature map: background ~0, object interior ~z, object border between
    c = 3
    z = np.array([4.0, 4.0, 4.0])
    feats = np.zeros((c, 6, 6))
    feats[:, 1:5, 1:5] = 2.0
    feats[:, 2:4, 2:4] = z[:, None, None]
    Z = feats.reshape(c, -1)
    cache = AnchorCache.create(c, 2)
    s = assign_and_sample(Z, z, cache, mask(0, 2), 36, seeded_rng(0))
    lab = s.labels.reshape(6, 6)
    # init {0, z + eps, z}: background sits on the Universum anchor, the interior on
    # the target anchors; the ring at 2.0 is equidistant and may go either way.
    assert np.all(lab[0, :] == 0) and np.all(lab[:, 0] == 0)
    assert np.all(np.isin(lab[2:4, 2:4], [1, 2]))


# --- update_cache --------------------------------------------------------------


@pytest.mark.parametrize("literal,count", [(False, 1), (True, 2)])
def test_universum_branch_half_weight(literal, count):
    cache = AnchorCache.create(2, 2)
    cache.M[:, 0] = [1.0, 1.0]
    cache.universum_count = count
    cache.seen_count[0] = 3
    centers = np.array([[3.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    update_cache(cache, centers, np.zeros(2), mask(0, 2), literal=literal)
    np.testing.assert_allclose(cache.M[:, 0], [2.0, 2.0], atol=1e-9)


@pytest.mark.parametrize("literal", [False, True])
def test_first_update_takes_farther_center(literal):
    cache = AnchorCache.create(2, 2)
    centers = np.array([[0.0, 1.0, 3.0], [0.0, 0.0, 0.0]])
    update_cache(cache, centers, np.zeros(2), mask(1, 2), literal=literal)
    np.testing.assert_allclose(cache.M[:, 2], [3.0, 0.0], atol=1e-9)
    assert cache.seen_count.tolist() == [0, 1]


@pytest.mark.parametrize("literal", [False, True])
def test_first_update_tie_takes_true_target_center(literal):
    cache = AnchorCache.create(2, 2)
    centers = np.array([[0.0, 1.0, -1.0], [0.0, 0.0, 0.0]])
    update_cache(cache, centers, np.zeros(2), mask(0, 2), literal=literal)
    np.testing.assert_allclose(cache.M[:, 1], [1.0, 0.0], atol=1e-9)


@pytest.mark.parametrize("literal,seen,expected", [
    (False, 1, [2.0, 4.0]),    # running mean: 1/2 old + 1/2 new
    (False, 3, [1.5, 3.0]),    # 3/4 old + 1/4 new
    (True, 1, [1.0, 2.0]),     # literal r = 1/1 keeps the old anchor
    (True, 4, [2.5, 5.0]),     # literal 1/4 old + 3/4 new
])
def test_true_target_branch(literal, seen, expected):
    cache = AnchorCache.create(2, 2)
    cache.M[:, 1] = [1.0, 2.0]
    cache.seen_count[0] = seen
    centers = np.array([[0.0, 3.0, 100.0], [0.0, 6.0, 100.0]])
    update_cache(cache, centers, np.zeros(2), mask(0, 2), literal=literal)
    np.testing.assert_allclose(cache.M[:, 1], expected, atol=1e-9)
    assert cache.seen_count[0] == seen + 1


def test_running_mean_converges_to_sequence_mean():
    rng = np.random.default_rng(0)
    seq = rng.normal(size=(100, 3))
    cache = AnchorCache.create(3, 1)
    z = np.full(3, 1e6)  # first update picks C1 because C2 sits on z
    for i, c in enumerate(seq):
        centers = np.stack([c, c, z if i == 0 else c], axis=1)
        update_cache(cache, centers, z, mask(0, 1))
    np.testing.assert_allclose(cache.M[:, 1], seq.mean(0), atol=1e-6)
    np.testing.assert_allclose(cache.M[:, 0], seq.mean(0), atol=1e-6)


def test_cache_csv_dump():
    cache = AnchorCache.create(2, 2)
    cache.M[:, 1] = [0.5, -1.0]
    cache.seen_count[0] = 3
    lines = cache.to_csv().strip().splitlines()
    assert lines[0] == "column,role,seen_count,v0,v1"
    assert lines[2] == "1,class_0,3,0.5,-1.0"
    assert len(lines) == 4


def test_cache_evolution_deterministic():
    def run():
        rng = seeded_rng(5)
        data = np.random.default_rng(9)
        cache = AnchorCache.create(4, 3)
        for _ in range(20):
            Z = data.normal(size=(4, 36))
            k = int(data.integers(3))
            s = assign_and_sample(Z, Z.mean(1), cache, mask(k, 3), 8, rng)
            update_cache(cache, s.centers, Z.mean(1), mask(k, 3))
        return cache
    a, b = run(), run()
    assert np.array_equal(a.M, b.M) and np.array_equal(a.seen_count, b.seen_count)
