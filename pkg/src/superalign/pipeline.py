"""Composed registration: downsample, describe, correlate, extract, filter, estimate.

The stages are exposed separately so benchmark drivers can reuse an expensive
front end (superpoints and descriptors) across several matcher and estimator
choices, and :func:`register_pair` simply chains them.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import PipelineConfig
from .descriptors import (
    FeatureMatrix,
    SuperpointSet,
    compute_local_descriptors,
    load_features,
    voxel_downsample,
)
from .errors import ParameterError, RegistrationError, StageError, UnderdeterminedError
from .estimation import RegistrationResult, icp_refine, ransac_estimate, weighted_rms
from .geom import PointCloud
from .kabsch import weighted_kabsch_umeyama
from .matching import (
    CorrelationMatrix,
    WeightedCorrespondences,
    dual_softmax_correlation,
    extract_correspondences,
    filter_top_fraction,
    global_softmax_correlation,
    sinkhorn_match,
)

_STAGE_TYPES = {}


def stage_error(stage: str, cause: Exception) -> StageError:
    """A :class:`StageError` that is also an instance of ``type(cause)``.

    Callers can catch either the stage wrapper or the original error class.
    """
    cls = type(cause)
    if not isinstance(cause, RegistrationError) or isinstance(cause, StageError):
        return StageError(stage, cause)
    if cls not in _STAGE_TYPES:
        _STAGE_TYPES[cls] = type(f"Stage{cls.__name__}", (StageError, cls), {})
    return _STAGE_TYPES[cls](stage, cause)


class _Timer:
    def __init__(self, timing: dict, stage: str):
        self.timing = timing
        self.stage = stage

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timing[self.stage] = self.timing.get(self.stage, 0.0) + time.perf_counter() - self.start
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise stage_error(self.stage, exc) from exc
        return False


@dataclass
class FrontEnd:
    source: SuperpointSet
    target: SuperpointSet
    features_x: FeatureMatrix
    features_y: FeatureMatrix
    timing: dict = field(default_factory=dict)


def _identity_superpoints(cloud: PointCloud) -> SuperpointSet:
    return SuperpointSet(cloud, tuple(np.array([i]) for i in range(len(cloud))))


def prepare(x: PointCloud, y: PointCloud, cfg: PipelineConfig = PipelineConfig(),
            features: Optional[tuple] = None) -> FrontEnd:
    """Superpoints and their features for both clouds.

    ``features`` (or ``cfg.features`` paths) supplies precomputed rows. When a
    feature file has one row per input point the clouds are taken as the
    superpoints themselves; otherwise rows must match the voxel superpoints.
    """
    timing = {}
    if features is None and (cfg.features.source or cfg.features.target):
        if not (cfg.features.source and cfg.features.target):
            raise stage_error("descriptors", ParameterError(
                "feature files must be given for both source and target"))
        with _Timer(timing, "load_features"):
            features = (load_features(cfg.features.source), load_features(cfg.features.target))
    if features is not None:
        fx, fy = features
        sets = []
        with _Timer(timing, "downsample"):
            for cloud, fm in ((x, fx), (y, fy)):
                if len(fm) == len(cloud):
                    sets.append(_identity_superpoints(cloud))
                    continue
                sp = voxel_downsample(cloud, cfg.voxel_size)
                if len(fm) != len(sp):
                    raise ParameterError(
                        f"{len(fm)} feature rows match neither {len(cloud)} points "
                        f"nor {len(sp)} superpoints")
                sets.append(sp)
        return FrontEnd(sets[0], sets[1], fx, fy, timing)
    with _Timer(timing, "downsample"):
        sx = voxel_downsample(x, cfg.voxel_size)
        sy = voxel_downsample(y, cfg.voxel_size)
    with _Timer(timing, "descriptors"):
        fx = compute_local_descriptors(sx, x, cfg.descriptor)
        fy = compute_local_descriptors(sy, y, cfg.descriptor)
    return FrontEnd(sx, sy, fx, fy, timing)


def correlate(front: FrontEnd, cfg: PipelineConfig = PipelineConfig(), timing=None) -> CorrelationMatrix:
    """Correlation with rows on the smaller superpoint set.

    Putting the smaller side on the rows makes every extracted pair the argmax
    of a normalized distribution, so no target becomes a hub for many rows.
    """
    timing = {} if timing is None else timing
    fx, fy = front.features_x, front.features_y
    swap = len(fx) > len(fy)
    a, b = (fy, fx) if swap else (fx, fy)
    with _Timer(timing, "correlation"):
        name = cfg.matcher.name
        if name == "global_softmax":
            c = global_softmax_correlation(a, b, cfg.matcher.temperature)
        elif name == "dual_softmax":
            c = dual_softmax_correlation(a, b, cfg.matcher.temperature)
        else:
            c = sinkhorn_match(a, b, cfg.sinkhorn)
    if swap:
        c = CorrelationMatrix(c.entries, False, c.degenerate_rows, c.degenerate_cols, c.transport)
    return c


def inject_outliers(wc: WeightedCorrespondences, c: CorrelationMatrix, n_target: int,
                    fraction: float, seed: int) -> WeightedCorrespondences:
    """Reassign a random ``fraction`` of pairs to random targets.

    The corrupted pairs take the correlation value at their new entry, which
    is what a matcher would report for such a pair.
    """
    if fraction <= 0 or len(wc) == 0:
        return wc
    rng = np.random.default_rng(seed)
    k = int(round(fraction * len(wc)))
    which = np.sort(rng.choice(len(wc), size=k, replace=False))
    pairs = wc.pairs.copy()
    new_t = rng.integers(0, n_target, size=k)
    # Never "corrupt" a pair into its own original target.
    same = new_t == pairs[which, 1]
    new_t[same] = (new_t[same] + 1) % max(n_target, 1)
    pairs[which, 1] = new_t
    weights = wc.weights.copy()
    if c.rows_are_source:
        weights[which] = c.entries[pairs[which, 0], new_t]
    else:
        weights[which] = c.entries[new_t, pairs[which, 0]]
    return WeightedCorrespondences(pairs, np.clip(weights, 0.0, 1.0))


def select(front: FrontEnd, c: CorrelationMatrix, cfg: PipelineConfig = PipelineConfig(),
           timing=None) -> WeightedCorrespondences:
    timing = {} if timing is None else timing
    with _Timer(timing, "extract"):
        wc = extract_correspondences(c, front.source, front.target)
        wc = inject_outliers(wc, c, len(front.target), cfg.outlier_fraction, cfg.seed)
    with _Timer(timing, "filter"):
        # The estimator decides whether the survivors determine a pose.
        wc = filter_top_fraction(wc, cfg.filter_fraction, min_pairs=0)
    return wc


def estimate(front: FrontEnd, wc: WeightedCorrespondences, x: PointCloud, y: PointCloud,
             cfg: PipelineConfig = PipelineConfig(), timing=None) -> RegistrationResult:
    timing = {} if timing is None else timing
    src = front.source.xyz[wc.source_idx]
    dst = front.target.xyz[wc.target_idx]
    with _Timer(timing, "estimate"):
        if len(wc) < 3:
            raise UnderdeterminedError(f"{len(wc)} correspondences cannot fix a rigid pose")
        if cfg.estimator == "ransac":
            res = ransac_estimate(wc, front.source, front.target, cfg.ransac)
        else:
            t = weighted_kabsch_umeyama(src, dst, wc.weights)
            res = RegistrationResult(t, wc, weighted_rms(t, src, dst, wc.weights))
    if cfg.estimator == "kabsch+icp":
        with _Timer(timing, "refine"):
            icp = icp_refine(x, y, res.transform, cfg.icp)
        res = RegistrationResult(icp.transform, wc, weighted_rms(icp.transform, src, dst, wc.weights),
                                 stalled=icp.stalled, iterations=icp.iterations)
    res.superpoints = (front.source, front.target)
    return res


def register_pair(x: PointCloud, y: PointCloud, cfg: PipelineConfig = PipelineConfig(),
                  features: Optional[tuple] = None) -> RegistrationResult:
    """Estimate the rigid transform mapping ``x`` onto ``y``.

    Errors raised inside a stage are re-raised tagged with the stage name and
    remain instances of their original class.
    """
    front = prepare(x, y, cfg, features)
    timing = dict(front.timing)
    c = correlate(front, cfg, timing)
    wc = select(front, c, cfg, timing)
    res = estimate(front, wc, x, y, cfg, timing)
    res.timing = timing
    return res
