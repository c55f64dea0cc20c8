"""End-to-end toy optimization: learn superpoint embeddings through matching.

Free per-superpoint embeddings are matched with a global softmax, the matched
weights drive the weighted Kabsch fit, and the combined objective

    L_T + alpha * L_f + beta * (L_oX + L_oY)

is minimized by plain gradient descent. There is no overlap head: the
predicted overlap of a superpoint is its best correlation (row max for the
source, column max for the target).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RegistrationError
from .geom import Se3Transform, random_se3
from .kabsch import kabsch_backward, kabsch_solve
from .losses import (
    InfoNceParams,
    LossWeights,
    OverlapLabels,
    infonce_feature_loss,
    infonce_grad,
    overlap_loss,
    overlap_loss_grad,
    total_loss,
    transformation_loss,
    transformation_loss_grad,
)
from .matching import row_softmax
from .metrics import rre
from .synthetic import sample_shape


@dataclass
class ToyInstance:
    source: np.ndarray         # (n, 3) superpoints
    target: np.ndarray         # (n, 3) superpoints, shuffled
    gt: Se3Transform
    match: np.ndarray          # match[i] = target index of source i
    features_x: np.ndarray
    features_y: np.ndarray
    labels_x: np.ndarray
    labels_y: np.ndarray


def make_toy_instance(seed: int = 0, n: int = 64, dim: int = 16,
                      noise: float = 0.002, init_scale: float = 0.1,
                      shape: str = "cube") -> ToyInstance:
    rng = np.random.default_rng(seed)
    src = sample_shape(shape, n, rng)
    gt = random_se3(int(rng.integers(2**31)), 180.0, 1.0)
    perm = rng.permutation(n)
    tgt = np.empty_like(src)
    tgt[perm] = gt.apply(src) + rng.normal(scale=noise, size=src.shape)
    fx = rng.normal(scale=init_scale, size=(n, dim))
    fy = rng.normal(scale=init_scale, size=(n, dim))
    return ToyInstance(src, tgt, gt, perm, fx, fy, np.ones(n), np.ones(n))


@dataclass
class FitTrace:
    loss: list = field(default_factory=list)
    rre: list = field(default_factory=list)
    components: list = field(default_factory=list)
    diverged: bool = False

    def __len__(self):
        return len(self.loss)


def _objective(fx, fy, upper, inst: ToyInstance, w: LossWeights, need_grad: bool):
    c = row_softmax(fx @ fy.T)
    n_x, n_y = c.shape
    j_star = np.argmax(c, axis=1)
    rows = np.arange(n_x)
    weights = c[rows, j_star]
    params = InfoNceParams(upper)
    gt_pairs = np.stack([rows, inst.match], axis=1)

    st = kabsch_solve(inst.source, inst.target[j_star], weights)
    est = Se3Transform(st.rotation, st.translation)
    lt = transformation_loss(est, inst.gt, inst.source)
    lf = infonce_feature_loss(fx, fy, gt_pairs, params)
    i_star = np.argmax(c, axis=0)
    cols = np.arange(n_y)
    lab_x = OverlapLabels(inst.labels_x, weights)
    lab_y = OverlapLabels(inst.labels_y, c[i_star, cols])
    lox, loy = overlap_loss(lab_x), overlap_loss(lab_y)
    loss = total_loss(lt, lf, lox, loy, w)
    out = {"loss": loss, "rre": rre(est, inst.gt),
           "parts": (lt, lf, lox, loy)}
    if not need_grad:
        return out

    g_c = np.zeros_like(c)
    g_r, g_t = transformation_loss_grad(st.rotation, st.translation, inst.gt, inst.source)
    g_w, _, _ = kabsch_backward(st, inst.source, inst.target[j_star], g_r, g_t)
    g_c[rows, j_star] += g_w
    # Clamped predictions have zero derivative.
    px = np.where((weights > 1e-7) & (weights < 1 - 1e-7), 1.0, 0.0)
    g_c[rows, j_star] += w.beta * overlap_loss_grad(lab_x) * px
    py_raw = c[i_star, cols]
    py = np.where((py_raw > 1e-7) & (py_raw < 1 - 1e-7), 1.0, 0.0)
    np.add.at(g_c, (i_star, cols), w.beta * overlap_loss_grad(lab_y) * py)
    g_s = c * (g_c - np.sum(c * g_c, axis=1, keepdims=True))
    g_fx = g_s @ fy
    g_fy = g_s.T @ fx
    nce = infonce_grad(fx, fy, gt_pairs, params)
    out["grad"] = (g_fx + w.alpha * nce.d_features_x,
                   g_fy + w.alpha * nce.d_features_y,
                   w.alpha * nce.d_upper)
    return out


def toy_end_to_end_fit(inst: ToyInstance, steps: int = 200, step_size: float = 10.0,
                       weights: LossWeights = LossWeights(),
                       learn_bilinear: bool = True) -> FitTrace:
    """Gradient descent on the embeddings; returns per-step loss and RRE.

    The trace has ``steps + 1`` entries (initial state included). A loss above
    ten times the initial value marks the trace diverged and stops early.
    """
    fx = inst.features_x.copy()
    fy = inst.features_y.copy()
    upper = InfoNceParams.identity(fx.shape[1]).upper.copy()
    trace = FitTrace()
    for step in range(steps + 1):
        try:
            out = _objective(fx, fy, upper, inst, weights, need_grad=step < steps)
        except RegistrationError:
            trace.diverged = True
            break
        trace.loss.append(out["loss"])
        trace.rre.append(out["rre"])
        trace.components.append(out["parts"])
        if not np.isfinite(out["loss"]) or out["loss"] > 10.0 * trace.loss[0]:
            trace.diverged = True
            break
        if step == steps:
            break
        g_fx, g_fy, g_u = out["grad"]
        fx -= step_size * g_fx
        fy -= step_size * g_fy
        if learn_bilinear:
            upper -= step_size * g_u
    return trace
