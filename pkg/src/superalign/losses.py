"""Training objectives and their analytic gradients.

The transformation loss is differentiated through the weighted Kabsch solver
(see :func:`superalign.kabsch.kabsch_backward`), so correspondence weights and
source points receive exact gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import NeedsNegativesError, ParameterError
from .geom import Se3Transform, SpatialIndex
from .kabsch import kabsch_backward, kabsch_solve
from .parallel import parallel_map

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1   # feature loss
    beta: float = 1.0    # overlap loss

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ParameterError("loss weights must be >= 0")


@dataclass(frozen=True)
class OverlapLabels:
    target: np.ndarray
    predicted: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.target, dtype=float).reshape(-1)
        p = np.asarray(self.predicted, dtype=float).reshape(-1)
        if t.shape != p.shape:
            raise ParameterError("overlap targets and predictions differ in length")
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "predicted", np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


@dataclass(frozen=True)
class InfoNceParams:
    """Upper-triangular ``U``; the bilinear form is ``W = U + U^T``."""

    upper: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.upper, dtype=float)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ParameterError("U must be square")
        if np.any(np.tril(u, -1) != 0):
            raise ParameterError("U must be upper triangular")
        object.__setattr__(self, "upper", u)

    @classmethod
    def identity(cls, dim: int) -> "InfoNceParams":
        return cls(0.5 * np.eye(dim))

    @classmethod
    def from_matrix(cls, m) -> "InfoNceParams":
        """Canonical upper-triangular parameters sharing ``W = m + m^T``."""
        m = np.asarray(m, dtype=float)
        w = m + m.T
        return cls(np.triu(w, 1) + 0.5 * np.diag(np.diag(w)))

    @property
    def w(self) -> np.ndarray:
        return self.upper + self.upper.T


@dataclass
class GradientBundle:
    d_weights: Optional[np.ndarray] = None
    d_source_points: Optional[np.ndarray] = None
    d_target_points: Optional[np.ndarray] = None
    d_features_x: Optional[np.ndarray] = None
    d_features_y: Optional[np.ndarray] = None
    d_upper: Optional[np.ndarray] = None
    d_predicted: Optional[np.ndarray] = None


def _rows(f):
    return f.rows if hasattr(f, "rows") else np.asarray(f, dtype=float)


def _pairs(pairs):
    if hasattr(pairs, "pairs"):
        pairs = pairs.pairs
    return np.asarray(pairs, dtype=int).reshape(-1, 2)


def transformation_loss(est: Se3Transform, gt: Se3Transform, points) -> float:
    """Mean over points of the L1 distance between estimated and true positions."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        raise ParameterError("transformation loss needs at least one point")
    return float(np.mean(np.sum(np.abs(est.apply(p) - gt.apply(p)), axis=1)))


def transformation_loss_grad(rotation, translation, gt: Se3Transform, points):
    """``(dL/dR, dL/dt)``; the subgradient at zero residual is taken as 0.

    Residuals at round-off level of the point magnitudes count as zero, so an
    exact fit reproduced in floating point is still stationary.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    target = gt.apply(p)
    e = p @ np.asarray(rotation).T + translation - target
    tiny = 1e-12 * (1.0 + np.abs(target))
    s = np.where(np.abs(e) <= tiny, 0.0, np.sign(e)) / len(p)
    return s.T @ p, s.sum(axis=0)


def overlap_loss(labels: OverlapLabels) -> float:
    """Mean binary cross-entropy, predictions clamped to [1e-7, 1 - 1e-7]."""
    o, p = labels.target, labels.predicted
    if len(o) == 0:
        return 0.0
    return float(-np.mean(o * np.log(p) + (1.0 - o) * np.log(1.0 - p)))


def overlap_loss_grad(labels: OverlapLabels) -> np.ndarray:
    """Derivative with respect to the (clamped) predicted probabilities."""
    o, p = labels.target, labels.predicted
    return -(o / p - (1.0 - o) / (1.0 - p)) / max(len(o), 1)


def _infonce_scores(fx, fy, pairs, params):
    pr = _pairs(pairs)
    if len(pr) < 2:
        raise NeedsNegativesError(f"InfoNCE needs at least 2 pairs, got {len(pr)}")
    a = _rows(fx)[pr[:, 0]]
    b = _rows(fy)[pr[:, 1]]
    if a.shape[1] != b.shape[1] or a.shape[1] != params.upper.shape[0]:
        raise ParameterError("feature and bilinear-form dimensions disagree")
    return pr, a, b, a @ params.w @ b.T


def infonce_feature_loss(fx, fy, pairs, params: InfoNceParams) -> float:
    """Contrastive loss over exponentiated bilinear scores of matched pairs.

    Each anchor ``fx[a_i]`` is scored against every ``fy[b_j]`` in the batch;
    the matched partner is the positive, all others negatives.
    """
    _, _, _, s = _infonce_scores(fx, fy, pairs, params)
    return float(np.mean(logsumexp(s, axis=1) - np.diag(s)))


def infonce_grad(fx, fy, pairs, params: InfoNceParams) -> GradientBundle:
    pr, a, b, s = _infonce_scores(fx, fy, pairs, params)
    k = len(pr)
    p = np.exp(s - logsumexp(s, axis=1, keepdims=True))
    g = (p - np.eye(k)) / k
    w = params.w
    ga = g @ b @ w
    gb = g.T @ a @ w
    gw = a.T @ g @ b
    dfx = np.zeros_like(_rows(fx), dtype=float)
    dfy = np.zeros_like(_rows(fy), dtype=float)
    np.add.at(dfx, pr[:, 0], ga)
    np.add.at(dfy, pr[:, 1], gb)
    return GradientBundle(d_features_x=dfx, d_features_y=dfy, d_upper=np.triu(gw + gw.T))


def total_loss(lt: float, lf: float, lox: float, loy: float,
               w: LossWeights = LossWeights()) -> float:
    return lt + w.alpha * lf + w.beta * (lox + loy)


def _xyz(obj):
    if hasattr(obj, "xyz"):
        return obj.xyz
    if hasattr(obj, "points"):
        return np.asarray(obj.points, dtype=float)
    return np.asarray(obj, dtype=float).reshape(-1, 3)


def overlap_ground_truth(x, y, gt: Se3Transform, radius: float):
    """Binary overlap labels ``(o_x, o_y)`` from radius tests under ``gt``."""
    if not radius > 0:
        raise ParameterError("overlap radius must be > 0")
    px = gt.apply(_xyz(x))
    py = _xyz(y)
    if len(px) == 0 or len(py) == 0:
        return np.zeros(len(px)), np.zeros(len(py))
    dx, _ = SpatialIndex(py).nearest(px, radius * (1 + 1e-12))
    dy, _ = SpatialIndex(px).nearest(py, radius * (1 + 1e-12))
    return (dx <= radius).astype(float), (dy <= radius).astype(float)


def grad_transformation_loss_wrt_weights(src, dst, weights, gt: Se3Transform,
                                         eval_points) -> GradientBundle:
    """Gradient of the transformation loss of ``weighted_kabsch(src, dst, w)``."""
    st = kabsch_solve(src, dst, weights)
    g_r, g_t = transformation_loss_grad(st.rotation, st.translation, gt, eval_points)
    g_w, g_src, g_dst = kabsch_backward(st, src, dst, g_r, g_t)
    return GradientBundle(d_weights=g_w, d_source_points=g_src, d_target_points=g_dst)


def finite_difference_grad(fn, x, h: float = 1e-5, threads=None) -> np.ndarray:
    """Central differences of scalar ``fn`` at ``x``, one coordinate per task."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1)

    def partial(k):
        xp, xm = flat.copy(), flat.copy()
        xp[k] += h
        xm[k] -= h
        return (fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))) / (2.0 * h)

    return np.array(parallel_map(partial, range(flat.size), threads)).reshape(x.shape)


def gradient_relative_error(analytic, numeric) -> float:
    """``max|a - n| / max|n|`` (absolute error when the reference is ~0)."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = np.max(np.abs(n)) if n.size else 0.0
    err = np.max(np.abs(a - n)) if n.size else 0.0
    return float(err / scale) if scale > 1e-12 else float(err)
