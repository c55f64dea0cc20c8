"""Rigid transform estimators: weighted Kabsch, RANSAC and ICP baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateGeometryError, ParameterError, UnderdeterminedError
from .geom import PointCloud, Se3Transform, SpatialIndex
from .kabsch import weighted_kabsch_umeyama
from .matching import WeightedCorrespondences


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 10000
    inlier_threshold: float = 0.05
    sample_size: int = 3
    confidence: float = 0.999
    seed: int = 0
    weighted_sampling: bool = False
    batch_size: int = 256

    def __post_init__(self):
        if self.sample_size < 3:
            raise ParameterError("RANSAC sample_size must be >= 3")
        if not self.inlier_threshold > 0:
            raise ParameterError("RANSAC inlier_threshold must be > 0")
        if not 0.0 < self.confidence < 1.0:
            raise ParameterError("RANSAC confidence must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ParameterError("RANSAC max_iterations must be >= 1")


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    convergence_epsilon: float = 1e-6
    max_correspondence_distance: float = 0.05

    def __post_init__(self):
        if self.max_iterations < 1 or not self.convergence_epsilon > 0 \
                or not self.max_correspondence_distance > 0:
            raise ParameterError("ICP parameters must be positive")


@dataclass
class RegistrationResult:
    transform: Se3Transform
    correspondences: WeightedCorrespondences
    residual: float
    timing: dict = field(default_factory=dict)
    failed: bool = False
    stalled: bool = False
    iterations: int = 0
    inliers: Optional[np.ndarray] = None
    superpoints: Optional[tuple] = None

    @property
    def flagged(self) -> bool:
        return self.failed or self.stalled


def weighted_rms(t: Se3Transform, src, dst, weights=None) -> float:
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    if len(src) == 0:
        return 0.0
    r2 = np.sum((t.apply(src) - dst) ** 2, axis=1)
    w = np.ones(len(r2)) if weights is None else np.asarray(weights, float)
    total = w.sum()
    if total <= 0:
        return float(np.sqrt(r2.mean()))
    return float(np.sqrt((w @ r2) / total))


def _batched_kabsch(a, b):
    """Unweighted Kabsch over a batch of (k, 3) samples; returns R, t, ok."""
    am = a.mean(axis=1, keepdims=True)
    bm = b.mean(axis=1, keepdims=True)
    ac = a - am
    bc = b - bm
    h = np.einsum("bki,bkj->bij", ac, bc)
    u, s, vt = np.linalg.svd(h)
    v = np.transpose(vt, (0, 2, 1))
    ut = np.transpose(u, (0, 2, 1))
    d = np.sign(np.linalg.det(v @ ut))
    d[d == 0] = 1.0
    dm = np.zeros((len(a), 3, 3))
    dm[:, 0, 0] = 1.0
    dm[:, 1, 1] = 1.0
    dm[:, 2, 2] = d
    rot = v @ dm @ ut
    trans = bm[:, 0] - np.einsum("bij,bj->bi", rot, am[:, 0])
    # Collinear or repeated source samples cannot fix a rotation.
    ev = np.linalg.eigvalsh(np.einsum("bki,bkj->bij", ac, ac))
    ok = ev[:, -2] > 1e-9 * np.maximum(ev[:, -1], 1e-300)
    return rot, trans, ok


def ransac_estimate(wc: WeightedCorrespondences, sx, sy,
                    cfg: RansacConfig = RansacConfig()) -> RegistrationResult:
    """Hypothesize-and-verify over minimal samples, refit on the best inlier set.

    Hypotheses are drawn in batches but scored strictly in iteration order,
    so the selected model and early-exit point equal a serial run.
    """
    n = len(wc)
    if n < cfg.sample_size:
        raise ParameterError(f"RANSAC needs >= {cfg.sample_size} pairs, got {n}")
    src = _xyz(sx)[wc.source_idx]
    dst = _xyz(sy)[wc.target_idx]
    rng = np.random.default_rng(cfg.seed)
    p = None
    if cfg.weighted_sampling and wc.weights.sum() > 0:
        p = wc.weights / wc.weights.sum()
    thr2 = cfg.inlier_threshold ** 2
    best_count, best_mask = -1, None
    required = cfg.max_iterations
    done = 0
    log_fail = math.log(1.0 - cfg.confidence)
    while done < min(required, cfg.max_iterations):
        b = min(cfg.batch_size, cfg.max_iterations - done)
        if p is None:
            idx = np.stack([rng.permutation(n)[:cfg.sample_size] for _ in range(b)]) \
                if n < 64 else rng.integers(0, n, (b, cfg.sample_size))
        else:
            idx = rng.choice(n, size=(b, cfg.sample_size), p=p)
        rot, trans, ok = _batched_kabsch(src[idx], dst[idx])
        distinct = np.all(np.diff(np.sort(idx, axis=1), axis=1) > 0, axis=1)
        ok &= distinct
        moved = np.einsum("bij,nj->bni", rot, src) + trans[:, None, :]
        inl = np.sum((moved - dst[None]) ** 2, axis=2) <= thr2
        counts = np.where(ok, inl.sum(axis=1), 0)
        for h in range(b):
            it = done + h
            if it >= required:
                break
            if counts[h] > best_count:
                best_count, best_mask = int(counts[h]), inl[h]
                ratio = best_count / n
                if ratio >= 1.0:
                    required = it + 1
                elif ratio > 0:
                    denom = math.log(1.0 - ratio ** cfg.sample_size)
                    if denom < 0:
                        required = min(required, max(it + 1, math.ceil(log_fail / denom)))
        done = min(done + b, required)
    if best_count < 3:
        return RegistrationResult(Se3Transform.identity(), wc, float("nan"),
                                  failed=True, iterations=done)
    inliers = np.flatnonzero(best_mask)
    w = wc.weights[inliers]
    if np.count_nonzero(w > 0) < 3:
        w = np.ones(len(inliers))
    try:
        t = weighted_kabsch_umeyama(src[inliers], dst[inliers], w)
    except (DegenerateGeometryError, UnderdeterminedError):
        return RegistrationResult(Se3Transform.identity(), wc, float("nan"),
                                  failed=True, iterations=done)
    res = weighted_rms(t, src[inliers], dst[inliers], w)
    return RegistrationResult(t, wc, res, iterations=done, inliers=inliers)


@dataclass
class IcpResult:
    transform: Se3Transform
    residuals: list
    iterations: int
    stalled: bool = False
    converged: bool = False


def icp_refine(src: PointCloud, dst: PointCloud, init: Se3Transform,
               cfg: IcpConfig = IcpConfig()) -> IcpResult:
    """Point-to-point ICP with distance gating.

    An update is accepted only if the re-matched RMS residual does not grow,
    so ``residuals`` is non-increasing.
    """
    if len(src) == 0 or len(dst) == 0:
        raise ParameterError("ICP needs two nonempty clouds")
    sp = _xyz(src)
    index = SpatialIndex(_xyz(dst))
    dp = index.points
    max_d = cfg.max_correspondence_distance

    def match(t):
        d, j = index.nearest(t.apply(sp), max_d)
        mask = j >= 0
        if not mask.any():
            return None, None, np.inf
        return mask, j[mask], float(np.sqrt(np.mean(d[mask] ** 2)))

    t = init
    mask, j, res = match(t)
    if mask is None:
        return IcpResult(t, [], 0, stalled=True)
    residuals = [res]
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        try:
            t_new = weighted_kabsch_umeyama(sp[mask], dp[j])
        except (DegenerateGeometryError, UnderdeterminedError):
            break
        mask_n, j_n, res_n = match(t_new)
        if mask_n is None:
            return IcpResult(t, residuals, it, stalled=True)
        if res_n > res:
            converged = True
            break
        change = (res - res_n) / res if res > 0 else 0.0
        t, mask, j, res = t_new, mask_n, j_n, res_n
        residuals.append(res)
        if change < cfg.convergence_epsilon:
            converged = True
            break
    return IcpResult(t, residuals, it, converged=converged)


def _xyz(obj) -> np.ndarray:
    if hasattr(obj, "xyz"):
        return obj.xyz
    if hasattr(obj, "points"):
        return np.asarray(obj.points, float)
    return np.asarray(obj, float).reshape(-1, 3)
