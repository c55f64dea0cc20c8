import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superalign.errors import SpecInfeasibleError
from superalign.geom import rotation_angle
from superalign.losses import overlap_ground_truth
from superalign.synthetic import SHAPES, SyntheticPairSpec, generate_synthetic_pair, sample_shape


def sorted_rows(a):
    return a[np.lexsort(a.T[::-1])]


@given(st.integers(0, 10**6))
@settings(max_examples=20)
def test_full_overlap_is_a_shuffled_copy(seed):
    x, y, gt = generate_synthetic_pair(SyntheticPairSpec(point_count=200, seed=seed))
    assert len(x) == len(y) == 200
    assert np.array_equal(sorted_rows(gt.apply(x.points)), sorted_rows(y.points))
    assert not np.array_equal(gt.apply(x.points), y.points)


def test_deterministic():
    spec = SyntheticPairSpec(point_count=300, overlap_fraction=0.6, noise_sigma=0.01, seed=9)
    a, b = generate_synthetic_pair(spec), generate_synthetic_pair(spec)
    assert np.array_equal(a[0].points, b[0].points)
    assert np.array_equal(a[1].points, b[1].points)
    assert np.array_equal(a[2].as_matrix(), b[2].as_matrix())


@pytest.mark.parametrize("seed", range(6))
def test_partial_overlap_measured(seed):
    spec = SyntheticPairSpec(point_count=1500, overlap_fraction=0.3, seed=seed)
    x, y, gt = generate_synthetic_pair(spec)
    ox, oy = overlap_ground_truth(x, y, gt, spec.overlap_radius)
    measured = 0.5 * (ox.mean() + oy.mean())
    assert 0.25 <= measured <= 0.35


def test_bounds_respected():
    for seed in range(20):
        _, _, gt = generate_synthetic_pair(SyntheticPairSpec(point_count=50, max_angle=30,
                                                             max_translation=0.2, seed=seed))
        assert rotation_angle(gt.rotation) <= 30 + 1e-9
        assert np.linalg.norm(gt.translation) <= 0.2 + 1e-12


def test_every_shape_samples_requested_count():
    rng = np.random.default_rng(0)
    for shape in SHAPES:
        pts = sample_shape(shape, 123, rng)
        assert pts.shape == (123, 3) and np.isfinite(pts).all()


def test_unreachable_overlap():
    with pytest.raises(SpecInfeasibleError):
        generate_synthetic_pair(SyntheticPairSpec(point_count=100, overlap_fraction=0.01,
                                                  overlap_tolerance=0.001, seed=0))
