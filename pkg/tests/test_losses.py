import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from superalign.errors import NeedsNegativesError, ParameterError
from superalign.geom import PointCloud, Se3Transform, random_se3
from superalign.losses import (
    InfoNceParams,
    LossWeights,
    OverlapLabels,
    finite_difference_grad,
    grad_transformation_loss_wrt_weights,
    gradient_relative_error,
    infonce_feature_loss,
    infonce_grad,
    overlap_ground_truth,
    overlap_loss,
    overlap_loss_grad,
    total_loss,
    transformation_loss,
)
from superalign.synthetic import SyntheticPairSpec, generate_synthetic_pair

from oracles import kabsch_instance, lt_of

seeds = st.integers(0, 2**31 - 1)


class TestTransformationLoss:
    def test_exact(self):
        t = random_se3(0, 180, 1)
        assert transformation_loss(t, t, np.random.default_rng(0).normal(size=(9, 3))) == 0.0

    def test_unit_offset(self):
        gt = random_se3(1, 180, 1)
        est = Se3Transform(np.eye(3), [1.0, 0, 0]).compose(gt)
        pts = np.random.default_rng(1).normal(size=(13, 3))
        assert abs(transformation_loss(est, gt, pts) - 1.0) < 1e-12

    @given(seeds)
    def test_direct_sum(self, seed):
        est, gt = random_se3(seed, 180, 1), random_se3(seed + 1, 180, 1)
        pts = np.random.default_rng(seed).normal(size=(20, 3))
        want = sum(sum(abs(a - b) for a, b in zip(est.apply(p), gt.apply(p))) for p in pts) / 20
        got = transformation_loss(est, gt, pts)
        assert abs(got - want) < 1e-12 and got >= 0

    def test_empty(self):
        t = Se3Transform.identity()
        with pytest.raises(ParameterError):
            transformation_loss(t, t, np.zeros((0, 3)))


class TestOverlapLoss:
    def test_near_perfect(self):
        o = np.array([1, 0, 1, 1, 0.0])
        assert overlap_loss(OverlapLabels(o, np.where(o > 0, 1 - 1e-7, 1e-7))) <= 1e-6

    def test_half_everywhere(self):
        assert abs(overlap_loss(OverlapLabels(np.array([0, 1, 1.0]), np.full(3, 0.5))) - math.log(2)) < 1e-15

    def test_clamped(self):
        lab = OverlapLabels(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert np.all((lab.predicted > 0) & (lab.predicted < 1))
        assert np.isfinite(overlap_loss(lab))

    @given(seeds)
    def test_direct_sum(self, seed):
        rng = np.random.default_rng(seed)
        o = (rng.random(30) > 0.5).astype(float)
        p = rng.uniform(0.01, 0.99, 30)
        want = -sum(a * math.log(b) + (1 - a) * math.log(1 - b) for a, b in zip(o, p)) / 30
        assert abs(overlap_loss(OverlapLabels(o, p)) - want) < 1e-12

    @given(seeds)
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        o = (rng.random(25) > 0.5).astype(float)
        p = rng.uniform(0.05, 0.95, 25)
        num = finite_difference_grad(lambda q: overlap_loss(OverlapLabels(o, q)), p)
        assert gradient_relative_error(overlap_loss_grad(OverlapLabels(o, p)), num) <= 1e-4


def brute_infonce(fx, fy, pairs, w):
    total = 0.0
    k = len(pairs)
    for i in range(k):
        s = [fx[pairs[i][0]] @ w @ fy[pairs[j][1]] for j in range(k)]
        total += -math.log(math.exp(s[i]) / sum(math.exp(v) for v in s))
    return total / k


class TestInfoNce:
    def test_two_pair_closed_form(self):
        s = 1.7
        fx = np.eye(3)[:2]
        fy = s * np.eye(3)[:2]
        pairs = [[0, 0], [1, 1]]
        got = infonce_feature_loss(fx, fy, pairs, InfoNceParams.identity(3))
        assert abs(got - (-math.log(1 / (1 + math.exp(-s))))) < 1e-14

    @given(seeds)
    def test_brute_force_and_permutation(self, seed):
        rng = np.random.default_rng(seed)
        fx, fy = rng.normal(size=(10, 4)), rng.normal(size=(12, 4))
        pairs = np.stack([rng.permutation(10)[:6], rng.permutation(12)[:6]], axis=1)
        params = InfoNceParams(np.triu(rng.normal(size=(4, 4))))
        got = infonce_feature_loss(fx, fy, pairs, params)
        assert abs(got - brute_infonce(fx, fy, pairs, params.w)) < 1e-10
        perm = rng.permutation(6)
        assert abs(infonce_feature_loss(fx, fy, pairs[perm], params) - got) < 1e-12

    @given(seeds)
    def test_only_w_matters(self, seed):
        rng = np.random.default_rng(seed)
        fx, fy = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        pairs = np.stack([np.arange(5)] * 2, axis=1)
        u = np.triu(rng.normal(size=(3, 3)))
        other = InfoNceParams.from_matrix(u)     # same U + U^T, canonical split
        assert np.allclose(other.w, InfoNceParams(u).w)
        assert abs(infonce_feature_loss(fx, fy, pairs, other)
                   - infonce_feature_loss(fx, fy, pairs, InfoNceParams(u))) < 1e-12

    def test_needs_negatives(self):
        with pytest.raises(NeedsNegativesError):
            infonce_feature_loss(np.ones((1, 2)), np.ones((1, 2)), [[0, 0]], InfoNceParams.identity(2))

    def test_upper_triangular_enforced(self):
        with pytest.raises(ParameterError):
            InfoNceParams(np.ones((2, 2)))

    @given(seeds)
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        fx, fy = rng.normal(size=(7, 4)), rng.normal(size=(9, 4))
        pairs = np.stack([rng.permutation(7)[:5], rng.permutation(9)[:5]], axis=1)
        u = np.triu(rng.normal(scale=0.5, size=(4, 4)))
        g = infonce_grad(fx, fy, pairs, InfoNceParams(u))
        nx = finite_difference_grad(lambda a: infonce_feature_loss(a, fy, pairs, InfoNceParams(u)), fx)
        ny = finite_difference_grad(lambda b: infonce_feature_loss(fx, b, pairs, InfoNceParams(u)), fy)
        mask = np.triu(np.ones((4, 4)))
        nu = finite_difference_grad(
            lambda v: infonce_feature_loss(fx, fy, pairs, InfoNceParams(np.triu(v))), u) * mask
        assert gradient_relative_error(g.d_features_x, nx) <= 1e-4
        assert gradient_relative_error(g.d_features_y, ny) <= 1e-4
        assert gradient_relative_error(g.d_upper, nu) <= 1e-4


class TestTotalLoss:
    def test_values(self):
        assert total_loss(0, 0, 0, 0) == 0
        assert abs(total_loss(1, 1, 1, 1, LossWeights()) - 3.1) < 1e-15
        assert total_loss(2.5, 7, 3, 4, LossWeights(0, 0)) == 2.5

    def test_default_weights(self):
        assert LossWeights().alpha == 0.1 and LossWeights().beta == 1.0
        with pytest.raises(ParameterError):
            LossWeights(alpha=-1)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 3), st.floats(0, 3))
    def test_linear(self, a, b, alpha, beta):
        w = LossWeights(alpha, beta)
        base = total_loss(1, 2, 3, 4, w)
        assert abs(total_loss(1 + a, 2, 3, 4, w) - base - a) < 1e-9
        assert abs(total_loss(1, 2 + b, 3, 4, w) - base - alpha * b) < 1e-9


class TestOverlapGroundTruth:
    def test_exact_pair(self):
        x, y, gt = generate_synthetic_pair(SyntheticPairSpec(point_count=300, seed=1))
        ox, oy = overlap_ground_truth(x, y, gt, 0.01)
        assert ox.all() and oy.all()

    def test_far_apart(self):
        a = PointCloud(np.random.default_rng(0).random((20, 3)))
        b = PointCloud(np.random.default_rng(1).random((20, 3)) + 50)
        ox, oy = overlap_ground_truth(a, b, Se3Transform.identity(), 0.5)
        assert not ox.any() and not oy.any()

    def test_partial_matches_brute_force(self):
        x, y, gt = generate_synthetic_pair(SyntheticPairSpec(point_count=400, overlap_fraction=0.5, seed=2))
        ox, oy = overlap_ground_truth(x, y, gt, 0.03)
        px, py = gt.apply(x.points), y.points
        d = np.linalg.norm(px[:, None] - py[None], axis=2)
        assert np.array_equal(ox, (d.min(axis=1) <= 0.03).astype(float))
        assert np.array_equal(oy, (d.min(axis=0) <= 0.03).astype(float))
        assert 0 < ox.mean() < 1


class TestKabschGradient:
    @given(seeds)
    def test_weights_and_points_match_central_differences(self, seed):
        src, dst, w, gt, pts = kabsch_instance(seed)
        g = grad_transformation_loss_wrt_weights(src, dst, w, gt, pts)
        nw = finite_difference_grad(lambda v: lt_of(src, dst, v, gt, pts), w)
        ns = finite_difference_grad(lambda p: lt_of(p, dst, w, gt, pts), src)
        nd = finite_difference_grad(lambda p: lt_of(src, p, w, gt, pts), dst)
        assert gradient_relative_error(g.d_weights, nw) <= 1e-4
        assert gradient_relative_error(g.d_source_points, ns) <= 1e-4
        assert gradient_relative_error(g.d_target_points, nd) <= 1e-4

    def test_zero_weight_one_sided(self):
        src, dst, w, gt, pts = kabsch_instance(3)
        w = w.copy()
        w[4] = 0.0
        g = grad_transformation_loss_wrt_weights(src, dst, w, gt, pts).d_weights
        h = 1e-7
        bumped = w.copy()
        bumped[4] = h
        one_sided = (lt_of(src, dst, bumped, gt, pts) - lt_of(src, dst, w, gt, pts)) / h
        assert abs(g[4] - one_sided) <= 1e-4 * max(1.0, abs(one_sided))

    def test_stationary_at_exact_fit(self):
        rng = np.random.default_rng(4)
        src = rng.normal(size=(10, 3))
        gt = random_se3(4, 180, 1)
        g = grad_transformation_loss_wrt_weights(src, gt.apply(src), rng.random(10) + 0.1, gt, src)
        assert np.max(np.abs(g.d_weights)) <= 1e-8
        assert np.max(np.abs(g.d_source_points)) <= 1e-8


def test_finite_difference_helper_on_quadratic():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    x = np.array([0.3, -0.7])
    num = finite_difference_grad(lambda v: 0.5 * v @ a @ v, x, threads=3)
    assert np.allclose(num, a @ x, atol=1e-9)
    assert gradient_relative_error(a @ x, num) < 1e-9
