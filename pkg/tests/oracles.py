"""Independent reference constructions shared by unit and acceptance tests."""
import math

import numpy as np

from superalign.geom import Se3Transform, random_se3
from superalign.kabsch import kabsch_solve, weighted_kabsch_umeyama
from superalign.losses import transformation_loss


def rodrigues(axis, deg):
    k = np.asarray(axis, float) / np.linalg.norm(axis)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    a = math.radians(deg)
    return np.eye(3) + math.sin(a) * kx + (1 - math.cos(a)) * kx @ kx


def brute_chamfer(x, y):
    dx = [min(float(np.sum((p - q) ** 2)) for q in y) for p in x]
    dy = [min(float(np.sum((p - q) ** 2)) for q in x) for p in y]
    return sum(dx) / len(dx) + sum(dy) / len(dy)


def kabsch_instance(seed, n=12):
    """Random weighted instance away from SVD and L1 non-smoothness."""
    rng = np.random.default_rng(seed)
    while True:
        src = rng.normal(size=(n, 3))
        gt = random_se3(int(rng.integers(2**31)), 180, 1.0)
        dst = gt.apply(src) + rng.normal(scale=0.1, size=(n, 3))
        w = rng.uniform(0.2, 1.0, n)
        eval_pts = rng.normal(size=(10, 3))
        st_ = kabsch_solve(src, dst, w)
        s = st_.s
        gaps = min(s[0] - s[1], s[1] - s[2], s[2])
        est = Se3Transform(st_.rotation, st_.translation)
        margin = np.min(np.abs(est.apply(eval_pts) - gt.apply(eval_pts)))
        if gaps > 1e-3 * s[0] and margin > 1e-3:
            return src, dst, w, gt, eval_pts


def lt_of(src, dst, w, gt, pts):
    return transformation_loss(weighted_kabsch_umeyama(src, dst, w), gt, pts)
