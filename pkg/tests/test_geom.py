import numpy as np
import pytest
from hypothesis import given, strategies as st

from superalign.errors import EmptyInputError, ParameterError
from superalign.geom import (
    PointCloud,
    Se3Transform,
    SpatialIndex,
    axis_angle_to_rotation,
    knn_query,
    orthogonality_residual,
    quaternion_to_rotation,
    radius_query,
    random_se3,
    rotation_angle,
    rotation_to_quaternion,
    se3_apply,
    se3_compose,
    se3_inverse,
)

seeds = st.integers(0, 2**31 - 1)


def rand_t(seed):
    return random_se3(seed, 180.0, 2.0)


def test_apply_identity():
    assert np.array_equal(se3_apply(Se3Transform.identity(), [1, 2, 3]), [1, 2, 3])


def test_apply_quarter_turn_about_z():
    t = Se3Transform(axis_angle_to_rotation([0, 0, 1], np.pi / 2), np.zeros(3))
    assert np.allclose(se3_apply(t, [1, 0, 0]), [0, 1, 0], atol=1e-15)


@given(seeds)
def test_apply_inverse_round_trip(seed):
    t = rand_t(seed)
    p = np.random.default_rng(seed).normal(size=3)
    assert np.allclose(se3_apply(se3_inverse(t), se3_apply(t, p)), p, atol=1e-12)


def test_compose_with_identity():
    t = rand_t(1)
    c = se3_compose(t, Se3Transform.identity())
    assert np.array_equal(c.rotation, t.rotation)
    assert np.array_equal(c.translation, t.translation)


@given(seeds)
def test_compose_with_inverse_is_identity(seed):
    t = rand_t(seed)
    c = se3_compose(t, se3_inverse(t))
    assert np.allclose(c.as_matrix(), np.eye(4), atol=1e-12)


@given(seeds, seeds)
def test_compose_matches_homogeneous_product(a, b):
    ta, tb = rand_t(a), rand_t(b)
    # b is applied first
    assert np.allclose(se3_compose(ta, tb).as_matrix(), ta.as_matrix() @ tb.as_matrix(), atol=1e-12)


def test_inverse_examples():
    assert np.allclose(se3_inverse(Se3Transform.identity()).as_matrix(), np.eye(4))
    inv = se3_inverse(Se3Transform(np.eye(3), [0, 0, 5]))
    assert np.array_equal(inv.translation, [0, 0, -5])


@given(seeds, st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_apply_preserves_distances(seed, coords):
    t = rand_t(seed)
    p, q = np.array(coords[:3]), np.array(coords[3:])
    d0 = np.linalg.norm(p - q)
    d1 = np.linalg.norm(t.apply(p) - t.apply(q))
    assert abs(d1 - d0) <= 1e-9 * max(d0, 1.0)


@given(seeds, seeds, seeds)
def test_compose_associative(a, b, c):
    ta, tb, tc = rand_t(a), rand_t(b), rand_t(c)
    left = se3_compose(se3_compose(ta, tb), tc).as_matrix()
    right = se3_compose(ta, se3_compose(tb, tc)).as_matrix()
    assert np.max(np.abs(left - right)) <= 1e-9


def test_long_compose_chain_stays_in_so3():
    t = Se3Transform.identity()
    rng = np.random.default_rng(0)
    for k in range(5000):
        step = random_se3(int(rng.integers(2**31)), 30.0, 0.1)
        t = se3_compose(step, t) if k % 2 else se3_compose(t, step).inverse()
    assert orthogonality_residual(t.rotation) <= 1e-9
    assert abs(np.linalg.det(t.rotation) - 1) <= 1e-9


class TestSe3Validation:
    def test_slightly_drifted_rotation_is_repaired(self):
        r = axis_angle_to_rotation([1, 2, 3], 0.7) + 1e-6
        t = Se3Transform(r, np.zeros(3))
        assert orthogonality_residual(t.rotation) <= 1e-12

    def test_reflection_rejected(self):
        with pytest.raises(ParameterError):
            Se3Transform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_non_rotation_rejected(self):
        with pytest.raises(ParameterError):
            Se3Transform(2 * np.eye(3), np.zeros(3))

    def test_from_matrix_round_trip(self):
        t = rand_t(7)
        assert np.array_equal(Se3Transform.from_matrix(t.as_matrix()).as_matrix(), t.as_matrix())


class TestPointCloud:
    def test_non_finite_rejected(self):
        with pytest.raises(ParameterError):
            PointCloud(np.array([[0.0, np.nan, 0.0]]))

    def test_normals_must_be_unit(self):
        with pytest.raises(ParameterError):
            PointCloud(np.zeros((1, 3)), np.array([[0.0, 0.0, 2.0]]))

    def test_normals_count_checked(self):
        with pytest.raises(ParameterError):
            PointCloud(np.zeros((2, 3)), np.array([[0.0, 0.0, 1.0]]))

    def test_transformed_rotates_normals(self):
        t = Se3Transform(axis_angle_to_rotation([0, 0, 1], np.pi / 2), [1, 0, 0])
        c = PointCloud(np.array([[1.0, 0, 0]]), np.array([[1.0, 0, 0]])).transformed(t)
        assert np.allclose(c.points, [[1, 1, 0]])
        assert np.allclose(c.normals, [[0, 1, 0]])


class TestRandomSe3:
    def test_zero_bounds_give_identity(self):
        t = random_se3(3, 0.0, 0.0)
        assert np.allclose(t.as_matrix(), np.eye(4), atol=1e-15)

    def test_deterministic(self):
        assert np.array_equal(random_se3(11, 90, 1).as_matrix(), random_se3(11, 90, 1).as_matrix())

    def test_angle_and_translation_bounds(self):
        angles, norms = [], []
        for s in range(10_000):
            t = random_se3(s, 45.0, 0.5)
            angles.append(rotation_angle(t.rotation))
            norms.append(np.linalg.norm(t.translation))
        assert max(angles) <= 45.0 + 1e-9
        assert max(norms) <= 0.5 + 1e-12
        assert max(angles) > 40.0

    @pytest.mark.parametrize("angle,trans", [(-1, 0), (181, 0), (10, -0.1)])
    def test_bad_bounds(self, angle, trans):
        with pytest.raises(ParameterError):
            random_se3(0, angle, trans)


@given(seeds)
def test_quaternion_round_trip(seed):
    r = rand_t(seed).rotation
    q = rotation_to_quaternion(r)
    assert abs(np.linalg.norm(q) - 1) < 1e-12
    assert np.allclose(quaternion_to_rotation(q), r, atol=1e-12)


def test_rotation_angle_of_constructed_rotation():
    assert abs(rotation_angle(axis_angle_to_rotation([1, 1, 0], np.radians(33.0))) - 33.0) < 1e-9


def same_hits(got, want):
    assert [i for i, _ in got] == [i for i, _ in want]
    assert np.allclose([d for _, d in got], [d for _, d in want], rtol=1e-14, atol=0)


def brute_knn(points, q, k):
    d = np.sqrt(np.sum((points - q) ** 2, axis=1))
    order = np.lexsort((np.arange(len(points)), d))[:k]
    return [(int(i), float(d[i])) for i in order]


class TestSpatialIndex:
    def test_knn_on_stored_point(self):
        pts = np.random.default_rng(0).random((50, 3))
        assert knn_query(SpatialIndex(pts), pts[17], 1) == [(17, 0.0)]

    def test_knn_tie_goes_to_lowest_index(self):
        g = np.stack(np.meshgrid(*[np.arange(3.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
        # cell center equidistant to its 8 corners
        hits = knn_query(SpatialIndex(g), [0.5, 0.5, 0.5], 3)
        corners = sorted(i for i, p in enumerate(g) if np.all(p <= 1))
        assert [i for i, _ in hits] == corners[:3]

    def test_knn_k_larger_than_count(self):
        pts = np.random.default_rng(1).random((5, 3))
        assert len(knn_query(SpatialIndex(pts), [0, 0, 0], 50)) == 5

    def test_knn_matches_brute_force(self):
        rng = np.random.default_rng(2)
        pts = rng.random((1000, 3))
        index = SpatialIndex(pts)
        for _ in range(1000):
            q, k = rng.random(3), int(rng.integers(1, 12))
            same_hits(knn_query(index, q, k), brute_knn(pts, q, k))

    def test_knn_on_duplicated_points(self):
        pts = np.repeat(np.random.default_rng(3).random((20, 3)), 3, axis=0)
        index = SpatialIndex(pts)
        for q in pts[::7]:
            same_hits(knn_query(index, q, 4), brute_knn(pts, q, 4))

    def test_radius_small_and_huge(self):
        pts = np.random.default_rng(4).random((100, 3))
        index = SpatialIndex(pts)
        gaps = np.linalg.norm(pts[:, None] - pts[None], axis=2) + np.eye(100) * 9
        assert radius_query(index, pts[5], gaps.min() / 2) == [5]
        assert radius_query(index, [0, 0, 0], 1e9) == list(range(100))

    def test_radius_matches_brute_force(self):
        rng = np.random.default_rng(5)
        pts = rng.random((1000, 3))
        index = SpatialIndex(pts)
        for _ in range(1000):
            q, r = rng.random(3), float(rng.uniform(0.01, 0.3))
            d = np.sqrt(np.sum((pts - q) ** 2, axis=1))
            assert radius_query(index, q, r) == list(np.flatnonzero(d <= r))

    def test_radius_batch_agrees_with_single(self):
        rng = np.random.default_rng(6)
        pts = rng.random((300, 3))
        index = SpatialIndex(pts)
        qs = rng.random((40, 3))
        for q, got in zip(qs, index.radius_batch(qs, 0.2)):
            assert list(got) == radius_query(index, q, 0.2)

    def test_nearest_misses(self):
        index = SpatialIndex(np.zeros((1, 3)))
        d, i = index.nearest([[0, 0, 0.5], [0, 0, 2.0]], max_distance=1.0)
        assert i.tolist() == [0, -1] and d[0] == 0.5 and np.isinf(d[1])

    def test_empty_index(self):
        with pytest.raises(EmptyInputError):
            SpatialIndex(np.zeros((0, 3))).knn([0, 0, 0], 1)
        with pytest.raises(ParameterError):
            SpatialIndex(np.zeros((3, 3))).knn([0, 0, 0], 0)
