"""Procedural benchmark pairs with controlled overlap, jitter and pose."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError, SpecInfeasibleError
from .geom import PointCloud, Se3Transform, random_se3
from .losses import overlap_ground_truth

SHAPES = ("cube", "sphere", "lbracket")


@dataclass(frozen=True)
class SyntheticPairSpec:
    point_count: int = 1000
    overlap_fraction: float = 1.0
    noise_sigma: float = 0.0
    max_angle: float = 180.0
    max_translation: float = 1.0
    seed: int = 0
    shape: Optional[str] = None         # None: drawn from SHAPES by seed
    overlap_radius: float = 0.03        # meters, used to measure overlap
    overlap_tolerance: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.overlap_fraction <= 1.0:
            raise ParameterError("overlap_fraction must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be >= 0")
        if self.point_count < 3:
            raise ParameterError("point_count must be >= 3")
        if self.shape is not None and self.shape not in SHAPES:
            raise ParameterError(f"unknown shape {self.shape!r}; choose from {SHAPES}")


def _box_surface(lo, hi, n, rng):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    ext = hi - lo
    areas = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]]).repeat(2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    p = lo + rng.random((n, 3)) * ext
    axis = face // 2
    side = face % 2
    p[np.arange(n), axis] = np.where(side == 1, hi[axis], lo[axis])
    return p


def sample_shape(shape: str, n: int, rng) -> np.ndarray:
    """``n`` area-uniform surface samples of a unit-scale shape centered near 0."""
    if shape == "cube":
        return _box_surface([-0.5] * 3, [0.5] * 3, n, rng)
    if shape == "sphere":
        v = rng.normal(size=(n, 3))
        return 0.5 * v / np.linalg.norm(v, axis=1, keepdims=True)
    if shape == "lbracket":
        a_lo, a_hi = np.array([-0.5, -0.5, -0.25]), np.array([0.5, -0.2, 0.25])
        b_lo, b_hi = np.array([-0.5, -0.5, -0.25]), np.array([-0.2, 0.5, 0.25])
        out = np.zeros((0, 3))
        while len(out) < n:
            pts = np.concatenate([_box_surface(a_lo, a_hi, n, rng),
                                  _box_surface(b_lo, b_hi, n, rng)])
            # Drop faces buried inside the other box.
            in_a = np.all((pts > a_lo + 1e-12) & (pts < a_hi - 1e-12), axis=1)
            in_b = np.all((pts > b_lo + 1e-12) & (pts < b_hi - 1e-12), axis=1)
            out = np.concatenate([out, pts[~(in_a | in_b)]])
        return out[rng.permutation(len(out))[:n]]
    raise ParameterError(f"unknown shape {shape!r}")


def measured_overlap(a: np.ndarray, b: np.ndarray, radius: float) -> float:
    """Mean of the two fractions of points having a partner within ``radius``."""
    ox, oy = overlap_ground_truth(a, b, Se3Transform.identity(), radius)
    return 0.5 * (float(np.mean(ox)) + float(np.mean(oy)))


def _crop(base, direction, keep):
    s = base @ direction
    lo = np.quantile(s, 1.0 - keep)
    hi = np.quantile(s, keep)
    return np.flatnonzero(s <= hi), np.flatnonzero(s >= lo)


def generate_synthetic_pair(spec: SyntheticPairSpec):
    """Return ``(x, y, gt)`` with ``y`` expressed in the frame ``gt`` maps ``x`` to."""
    rng = np.random.default_rng(spec.seed)
    shape = spec.shape or SHAPES[int(rng.integers(len(SHAPES)))]
    base = sample_shape(shape, spec.point_count, rng)
    if spec.overlap_fraction >= 1.0:
        ix = iy = np.arange(len(base))
    else:
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        target = spec.overlap_fraction
        lo, hi = 0.5, 1.0
        best = None
        for _ in range(40):
            keep = 0.5 * (lo + hi)
            ix, iy = _crop(base, direction, keep)
            ov = measured_overlap(base[ix], base[iy], spec.overlap_radius)
            if best is None or abs(ov - target) < abs(best[0] - target):
                best = (ov, ix, iy)
            if abs(ov - target) <= spec.overlap_tolerance / 4:
                break
            if ov < target:
                lo = keep
            else:
                hi = keep
        ov, ix, iy = best
        if abs(ov - target) > spec.overlap_tolerance:
            raise SpecInfeasibleError(
                f"could not reach overlap {target:.3f} (best {ov:.3f})")
    xs = base[ix] + rng.normal(scale=spec.noise_sigma, size=(len(ix), 3)) \
        if spec.noise_sigma > 0 else base[ix].copy()
    ys = base[iy] + rng.normal(scale=spec.noise_sigma, size=(len(iy), 3)) \
        if spec.noise_sigma > 0 else base[iy].copy()
    xs = xs[rng.permutation(len(xs))]
    ys = ys[rng.permutation(len(ys))]
    gt = random_se3(int(rng.integers(2**31)), spec.max_angle, spec.max_translation)
    return PointCloud(xs), PointCloud(gt.apply(ys)), gt
