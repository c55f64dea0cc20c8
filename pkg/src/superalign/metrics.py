"""Registration metrics: RRE, RTE, Chamfer distance, IR, FMR and RR."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ParameterError
from .geom import PointCloud, Se3Transform, SpatialIndex, rotation_angle


@dataclass(frozen=True)
class ThresholdConfig:
    rr_rre_max: float = 5.0
    rr_rte_max: float = 0.3
    ir_distance_max: float = 0.1
    fmr_ir_min: float = 0.05

    def __post_init__(self):
        if min(self.rr_rre_max, self.rr_rte_max, self.ir_distance_max) <= 0:
            raise ParameterError("thresholds must be positive")
        if not 0.0 < self.fmr_ir_min < 1.0:
            raise ParameterError("fmr_ir_min must lie in (0, 1)")


@dataclass
class MetricsReport:
    rre: float
    rte: float
    chamfer: float = float("nan")
    inlier_ratio: float = float("nan")
    registered: bool = False
    time_s: float = 0.0


def rre(est: Se3Transform, gt: Se3Transform) -> float:
    """Geodesic angle between the two rotations, in degrees.

    This is ``arccos((tr(R_gt^T R) - 1) / 2)`` evaluated in a form that stays
    accurate for tiny angles (see :func:`rotation_angle`).
    """
    return rotation_angle(gt.rotation.T @ est.rotation)


def rte(est: Se3Transform, gt: Se3Transform) -> float:
    return float(np.linalg.norm(est.translation - gt.translation))


def _pts(c):
    return c.points if isinstance(c, PointCloud) else np.asarray(c, float).reshape(-1, 3)


def chamfer_distance(x, y) -> float:
    """Mean squared NN distance x->y plus y->x."""
    px, py = _pts(x), _pts(y)
    if len(px) == 0 or len(py) == 0:
        raise EmptyInputError("chamfer distance needs nonempty clouds")
    dxy, _ = SpatialIndex(py).nearest(px)
    dyx, _ = SpatialIndex(px).nearest(py)
    return float(np.mean(dxy ** 2) + np.mean(dyx ** 2))


def inlier_ratio(wc, sx, sy, gt: Se3Transform,
                 cfg: ThresholdConfig = ThresholdConfig()) -> float:
    if len(wc) == 0:
        raise EmptyInputError("inlier ratio of an empty correspondence set")
    xs = _xyz(sx)[wc.source_idx]
    ys = _xyz(sy)[wc.target_idx]
    d = np.linalg.norm(gt.apply(xs) - ys, axis=1)
    return float(np.mean(d <= cfg.ir_distance_max))


def feature_matching_recall(ratios, cfg: ThresholdConfig = ThresholdConfig()) -> float:
    ratios = np.asarray(list(ratios), float)
    if len(ratios) == 0:
        raise EmptyInputError("feature matching recall of an empty list")
    return float(np.mean(ratios >= cfg.fmr_ir_min))


def is_registered(r: float, t: float, cfg: ThresholdConfig) -> bool:
    return bool(r <= cfg.rr_rre_max and t <= cfg.rr_rte_max)


def registration_recall(reports, cfg: ThresholdConfig = ThresholdConfig()) -> float:
    reports = list(reports)
    if not reports:
        raise EmptyInputError("registration recall of an empty list")
    return float(np.mean([is_registered(r.rre, r.rte, cfg) for r in reports]))


def _xyz(obj):
    if hasattr(obj, "xyz"):
        return obj.xyz
    return _pts(obj)
