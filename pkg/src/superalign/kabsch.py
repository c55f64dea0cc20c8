"""Weighted Kabsch-Umeyama rigid fit (no scale) and its reverse-mode gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, GradientUndefinedError, ParameterError, UnderdeterminedError
from .geom import Se3Transform

DEGENERATE_TOL = 1e-9
GRAD_GUARD = 1e-9


@dataclass
class KabschState:
    """Intermediates of one solve, kept for differentiation."""

    weights: np.ndarray      # normalized to sum 1
    weight_sum: float
    src_mean: np.ndarray
    dst_mean: np.ndarray
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray
    d: float
    rotation: np.ndarray
    translation: np.ndarray


def _validate(src, dst, weights):
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if weights is None:
        weights = np.ones(len(src))
    w = np.asarray(weights, dtype=float).reshape(-1)
    if not (len(src) == len(dst) == len(w)):
        raise ParameterError(
            f"length mismatch: {len(src)} source, {len(dst)} target, {len(w)} weights")
    if len(w) and (np.any(w < 0) or not np.all(np.isfinite(w))):
        raise ParameterError("weights must be finite and non-negative")
    if np.count_nonzero(w > 0) < 3:
        raise UnderdeterminedError(
            f"need at least 3 positively weighted pairs, got {np.count_nonzero(w > 0)}")
    return src, dst, w


def kabsch_solve(src, dst, weights=None) -> KabschState:
    src, dst, w = _validate(src, dst, weights)
    total = w.sum()
    wn = w / total
    xm = wn @ src
    ym = wn @ dst
    xc = src - xm
    yc = dst - ym
    cov_x = (xc * wn[:, None]).T @ xc
    ev = np.linalg.eigvalsh(cov_x)
    if ev[-1] <= 0 or ev[-2] <= DEGENERATE_TOL * ev[-1]:
        raise DegenerateGeometryError("weighted source points are collinear or coincident")
    h = (xc * wn[:, None]).T @ yc
    u, s, vt = np.linalg.svd(h)
    scale = s[0] if s[0] > 0 else 1.0
    if s[1] <= DEGENERATE_TOL * scale and (s[1] - s[2]) <= DEGENERATE_TOL * scale:
        raise DegenerateGeometryError("cross-covariance has rank < 2")
    d = float(np.sign(np.linalg.det(vt.T @ u.T))) or 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    trans = ym - rot @ xm
    return KabschState(wn, float(total), xm, ym, u, s, vt, d, rot, trans)


def weighted_kabsch_umeyama(src, dst, weights=None) -> Se3Transform:
    """Minimizer of ``sum_i w_i |R x_i + t - y_i|^2`` over proper rigid motions."""
    st = kabsch_solve(src, dst, weights)
    return Se3Transform(st.rotation, st.translation)


def weighted_sse(t: Se3Transform, src, dst, weights) -> float:
    r = t.apply(np.asarray(src, float)) - np.asarray(dst, float)
    return float(np.asarray(weights, float) @ np.einsum("ij,ij->i", r, r))


def kabsch_backward(st: KabschState, src, dst, grad_rotation, grad_translation):
    """Pull ``dL/dR`` and ``dL/dt`` back to the raw weights and source points.

    Uses the symmetric-optimality differential of the polar factor: with
    ``S = R H = V diag(1,1,d) Sigma V^T``, a perturbation dH induces
    ``dR = B R`` where ``B`` solves ``B S + S B = -(R dH - dH^T R^T)``.

    Returns ``(d_weights, d_src, d_dst)``.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    g_r = np.asarray(grad_rotation, dtype=float)
    g_t = np.asarray(grad_translation, dtype=float)
    rot, xm, ym, wn = st.rotation, st.src_mean, st.dst_mean, st.weights

    # t = ym - R xm
    g_r = g_r - np.outer(g_t, xm)
    g_ym = g_t.copy()
    g_xm = -rot.T @ g_t

    v = st.vt.T
    lam = st.s * np.array([1.0, 1.0, st.d])
    den = lam[:, None] + lam[None, :]
    scale = max(abs(lam[0]), 1e-300)
    off = ~np.eye(3, dtype=bool)
    if np.any(np.abs(den[off]) < 1e-12 * scale):
        raise GradientUndefinedError("singular values too close for a stable derivative")
    small = off & (np.abs(den) < GRAD_GUARD)
    den = np.where(small, np.where(den < 0, -GRAD_GUARD, GRAD_GUARD), den)
    p = v.T @ (g_r @ rot.T) @ v
    q = np.zeros((3, 3))
    q[off] = -p[off] / den[off]
    q = v @ q @ v.T
    g_h = rot.T @ (q - q.T)

    # H = sum wn x y^T - xm ym^T
    g_xm = g_xm - g_h @ ym
    g_ym = g_ym - g_h.T @ xm
    g_wn = np.einsum("ij,jk,ik->i", src, g_h, dst) + src @ g_xm + dst @ g_ym
    g_w = (g_wn - wn @ g_wn) / st.weight_sum
    g_src = wn[:, None] * (dst @ g_h.T + g_xm)
    g_dst = wn[:, None] * (src @ g_h + g_ym)
    return g_w, g_src, g_dst
