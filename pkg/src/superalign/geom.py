"""Rigid transforms, point clouds and the spatial index used everywhere else."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInputError, ParameterError

ORTHO_TOL = 1e-9
REJECT_TOL = 1e-3


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Closest proper rotation in the Frobenius sense (polar factor)."""
    u, _, vt = np.linalg.svd(rotation)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def orthogonality_residual(rotation: np.ndarray) -> float:
    return float(np.max(np.abs(rotation.T @ rotation - np.eye(3))))


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ParameterError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise ParameterError(
                    f"normal count {len(nrm)} != point count {len(pts)}")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
                raise ParameterError("normals must have unit length")
            object.__setattr__(self, "normals", _frozen(nrm))

    def __len__(self):
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def diameter(self) -> float:
        """Length of the axis-aligned bounding-box diagonal."""
        if len(self) == 0:
            return 0.0
        return float(np.linalg.norm(self.points.max(0) - self.points.min(0)))

    def transformed(self, t: "Se3Transform") -> "PointCloud":
        normals = None if self.normals is None else self.normals @ t.rotation.T
        return PointCloud(t.apply(self.points), normals)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx, dtype=int)
        normals = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], normals)


@dataclass(frozen=True)
class Se3Transform:
    """Rigid transform ``p -> rotation @ p + translation``.

    Rotations drifting from SO(3) by more than ``ORTHO_TOL`` are projected
    back with a polar decomposition; anything further than ``REJECT_TOL``
    (or a reflection) is rejected.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ParameterError("transform entries must be finite")
        resid = orthogonality_residual(rot)
        if resid > REJECT_TOL or np.linalg.det(rot) <= 0:
            raise ParameterError(
                f"not a proper rotation (orthogonality residual {resid:.3g}, "
                f"det {np.linalg.det(rot):.6f})")
        if resid > ORTHO_TOL:
            rot = orthonormalize(rot)
        object.__setattr__(self, "rotation", _frozen(rot))
        object.__setattr__(self, "translation", _frozen(trans))

    @classmethod
    def identity(cls) -> "Se3Transform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Se3Transform":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ParameterError(f"expected 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, p):
        p = np.asarray(p, dtype=float)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "Se3Transform") -> "Se3Transform":
        return se3_compose(self, other)

    def inverse(self) -> "Se3Transform":
        return se3_inverse(self)


def se3_apply(t: Se3Transform, p) -> np.ndarray:
    return t.apply(p)


def se3_compose(a: Se3Transform, b: Se3Transform) -> Se3Transform:
    """Transform applying ``b`` first, then ``a``."""
    return Se3Transform(a.rotation @ b.rotation,
                        a.rotation @ b.translation + a.translation)


def se3_inverse(t: Se3Transform) -> Se3Transform:
    rt = t.rotation.T
    return Se3Transform(rt, -rt @ t.translation)


def axis_angle_to_rotation(axis, angle: float) -> np.ndarray:
    """Rodrigues' formula; ``angle`` in radians."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0 or angle == 0.0:
        return np.eye(3)
    k = axis / n
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def rotation_angle(rotation: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in degrees.

    Equal to ``arccos((tr R - 1) / 2)`` on SO(3), but computed with atan2 of
    the skew part so angles near 0 and 180 degrees keep full precision.
    """
    r = np.asarray(rotation, dtype=float)
    c = (np.trace(r) - 1.0) / 2.0
    s = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return float(np.degrees(np.arctan2(s, c)))


def quaternion_to_rotation(q) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` to rotation matrix."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def rotation_to_quaternion(rotation: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    m = np.asarray(rotation, dtype=float)
    # Symmetric 4x4 form whose top eigenvector is the quaternion (stable for
    # every angle, including 180 degrees).
    k = np.array([
        [m[0, 0] - m[1, 1] - m[2, 2], m[1, 0] + m[0, 1], m[2, 0] + m[0, 2], m[2, 1] - m[1, 2]],
        [m[1, 0] + m[0, 1], m[1, 1] - m[0, 0] - m[2, 2], m[2, 1] + m[1, 2], m[0, 2] - m[2, 0]],
        [m[2, 0] + m[0, 2], m[2, 1] + m[1, 2], m[2, 2] - m[0, 0] - m[1, 1], m[1, 0] - m[0, 1]],
        [m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1], m[0, 0] + m[1, 1] + m[2, 2]],
    ]) / 3.0
    vals, vecs = np.linalg.eigh(k)
    x, y, z, w = vecs[:, np.argmax(vals)]
    q = np.array([w, x, y, z])
    return q if w >= 0 else -q


def random_se3(seed: int, max_angle: float, max_translation: float) -> Se3Transform:
    """Random rigid transform with bounded rotation angle (degrees) and shift.

    The axis is uniform on the sphere, the angle uniform on
    ``[0, max_angle]`` and the translation uniform in the ball of radius
    ``max_translation``.
    """
    if not 0.0 <= max_angle <= 180.0:
        raise ParameterError(f"max_angle must lie in [0, 180], got {max_angle}")
    if not max_translation >= 0.0:
        raise ParameterError(f"max_translation must be >= 0, got {max_translation}")
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    angle = np.radians(max_angle) * rng.random()
    direction = rng.normal(size=3)
    radius = max_translation * rng.random() ** (1.0 / 3.0)
    rot = axis_angle_to_rotation(axis, angle)
    trans = direction / np.linalg.norm(direction) * radius
    return Se3Transform(rot, trans)


def _distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = points - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


class SpatialIndex:
    """KD-tree over a point set with deterministic tie handling.

    Candidate sets come from the tree; final distances and ordering are
    recomputed with the same arithmetic a brute-force scan uses, so answers
    coincide exactly with brute force.
    """

    def __init__(self, cloud):
        points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        self.points = points
        self._tree = cKDTree(points) if len(points) else None

    def __len__(self):
        return len(self.points)

    def knn(self, q, k: int):
        """``k`` nearest points as ``[(index, distance), ...]``, ascending."""
        if k < 1:
            raise ParameterError(f"k must be >= 1, got {k}")
        if self._tree is None:
            raise EmptyInputError("spatial index is empty")
        q = np.asarray(q, dtype=float).reshape(3)
        k = min(k, len(self.points))
        d, _ = self._tree.query(q, k=k)
        dk = float(np.atleast_1d(d)[-1])
        cand = np.asarray(self._tree.query_ball_point(q, dk * (1 + 1e-9) + 1e-12), dtype=int)
        dist = _distances(self.points[cand], q)
        order = np.lexsort((cand, dist))[:k]
        return [(int(cand[i]), float(dist[i])) for i in order]

    def radius(self, q, r: float):
        """Indices of all points within distance ``r`` (inclusive), ascending."""
        if not r > 0:
            raise ParameterError(f"radius must be > 0, got {r}")
        if self._tree is None:
            return []
        q = np.asarray(q, dtype=float).reshape(3)
        cand = np.asarray(self._tree.query_ball_point(q, r * (1 + 1e-9) + 1e-12), dtype=int)
        if len(cand) == 0:
            return []
        keep = cand[_distances(self.points[cand], q) <= r]
        return sorted(int(i) for i in keep)

    def radius_batch(self, queries, r: float):
        """Neighbor index arrays (ascending) for many queries at once."""
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        if self._tree is None:
            return [np.zeros(0, dtype=int) for _ in queries]
        raw = self._tree.query_ball_point(queries, r * (1 + 1e-9) + 1e-12)
        out = []
        for q, cand in zip(queries, raw):
            cand = np.asarray(cand, dtype=int)
            if len(cand):
                cand = np.sort(cand[_distances(self.points[cand], q) <= r])
            out.append(cand)
        return out

    def nearest(self, queries, max_distance: float = np.inf):
        """Vectorized 1-NN: ``(distances, indices)``; misses get ``inf``/``-1``."""
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        if self._tree is None:
            return np.full(len(queries), np.inf), np.full(len(queries), -1)
        d, i = self._tree.query(queries, k=1, distance_upper_bound=max_distance)
        i = np.where(np.isfinite(d), i, -1)
        return d, i


def knn_query(index: SpatialIndex, q, k: int):
    return index.knn(q, k)


def radius_query(index: SpatialIndex, q, r: float):
    return index.radius(q, r)
