"""Correlation matrices between superpoint features and correspondence extraction.

Global softmax is the primary matcher; dual-softmax and Sinkhorn exist as
ablation baselines and return the same row-stochastic contract.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .descriptors import FeatureMatrix
from .errors import EmptyCorrespondenceError, ParameterError, UnderdeterminedError

DEFAULT_TOP_FRACTION = 0.15


@dataclass(frozen=True)
class CorrelationMatrix:
    entries: np.ndarray
    rows_are_source: bool = True
    degenerate_rows: Optional[np.ndarray] = None
    degenerate_cols: Optional[np.ndarray] = None
    # Sinkhorn only: the transport plan before row renormalization.
    transport: Optional[np.ndarray] = None

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2:
            raise ParameterError("correlation entries must be 2-D")
        object.__setattr__(self, "entries", e)
        m, n = e.shape
        for name, size in (("degenerate_rows", m), ("degenerate_cols", n)):
            v = getattr(self, name)
            v = np.zeros(size, bool) if v is None else np.asarray(v, bool)
            if v.shape != (size,):
                raise ParameterError(f"{name} must have length {size}")
            object.__setattr__(self, name, v)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class WeightedCorrespondences:
    """Matched (source, target) superpoint index pairs with weights in [0, 1]."""

    pairs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=int).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(pairs):
            raise ParameterError("one weight per pair required")
        if len(w) and (not np.all(np.isfinite(w)) or w.min() < 0 or w.max() > 1):
            raise ParameterError("weights must be finite and within [0, 1]")
        if len(pairs) and pairs.min() < 0:
            raise ParameterError("pair indices must be non-negative")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)

    @property
    def source_idx(self):
        return self.pairs[:, 0]

    @property
    def target_idx(self):
        return self.pairs[:, 1]

    def subset(self, idx) -> "WeightedCorrespondences":
        idx = np.asarray(idx, dtype=int)
        return WeightedCorrespondences(self.pairs[idx], self.weights[idx])


@dataclass(frozen=True)
class SinkhornConfig:
    iterations: int = 100
    epsilon: float = 0.05
    slack: bool = True
    slack_logit: float = 0.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ParameterError("Sinkhorn iterations must be >= 1")
        if not self.epsilon > 0:
            raise ParameterError("Sinkhorn epsilon must be > 0")


def _check_pair(fx: FeatureMatrix, fy: FeatureMatrix, temperature: float):
    if fx.dim != fy.dim:
        raise ParameterError(f"feature dimension mismatch: {fx.dim} vs {fy.dim}")
    if not temperature > 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")


def row_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def global_softmax_correlation(fx: FeatureMatrix, fy: FeatureMatrix,
                               temperature: float = 1.0) -> CorrelationMatrix:
    """Row softmax of the feature inner products, one row per ``fx`` entry."""
    _check_pair(fx, fy, temperature)
    m, n = len(fx), len(fy)
    if m == 0 or n == 0:
        return CorrelationMatrix(np.zeros((m, n)), True, fx.degenerate, fy.degenerate)
    c = row_softmax(fx.rows @ fy.rows.T / temperature)
    c[fx.degenerate] = 1.0 / n
    return CorrelationMatrix(c, True, fx.degenerate, fy.degenerate)


def dual_softmax_correlation(fx: FeatureMatrix, fy: FeatureMatrix,
                             temperature: float = 1.0) -> CorrelationMatrix:
    """Product of row and column softmaxes, then rows renormalized to sum 1."""
    _check_pair(fx, fy, temperature)
    m, n = len(fx), len(fy)
    if m == 0 or n == 0:
        return CorrelationMatrix(np.zeros((m, n)), True, fx.degenerate, fy.degenerate)
    logits = fx.rows @ fy.rows.T / temperature
    # Log of the row-softmax times column-softmax product; at low temperature
    # the product itself underflows to 0 across whole rows.
    log_prod = 2.0 * logits - _lse(logits, 1) - _lse(logits, 0)
    prod = np.exp(log_prod - log_prod.max(axis=1, keepdims=True))
    c = prod / prod.sum(axis=1, keepdims=True)
    c[fx.degenerate] = 1.0 / n
    return CorrelationMatrix(c, True, fx.degenerate, fy.degenerate)


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))


def sinkhorn_plan(logits: np.ndarray, iterations: int, slack: bool = False,
                  slack_logit: float = 0.0) -> np.ndarray:
    """Log-domain alternating row/column normalization of ``exp(logits)``.

    With ``slack`` an extra row and column absorb unmatched mass; they are
    excluded from their own normalization and dropped from the result.
    """
    m, n = logits.shape
    if slack:
        la = np.full((m + 1, n + 1), float(slack_logit))
        la[:m, :n] = logits
        for _ in range(iterations):
            la[:m] -= _lse(la[:m], 1)
            la[:, :n] -= _lse(la[:, :n], 0)
        return np.exp(la[:m, :n])
    la = np.array(logits, dtype=float)
    for _ in range(iterations):
        la -= _lse(la, 1)
        la -= _lse(la, 0)
    return np.exp(la)


def sinkhorn_match(fx: FeatureMatrix, fy: FeatureMatrix,
                   cfg: SinkhornConfig = SinkhornConfig()) -> CorrelationMatrix:
    _check_pair(fx, fy, 1.0)
    m, n = len(fx), len(fy)
    if m == 0 or n == 0:
        return CorrelationMatrix(np.zeros((m, n)), True, fx.degenerate, fy.degenerate)
    logits = fx.rows @ fy.rows.T / cfg.epsilon
    plan = sinkhorn_plan(logits, cfg.iterations, cfg.slack, cfg.slack_logit)
    rows = plan / plan.max(axis=1, keepdims=True)
    c = rows / rows.sum(axis=1, keepdims=True)
    c[fx.degenerate] = 1.0 / n
    return CorrelationMatrix(c, True, fx.degenerate, fy.degenerate, transport=plan)


def extract_correspondences(c: CorrelationMatrix, sx=None, sy=None) -> WeightedCorrespondences:
    """Argmax match for every superpoint of the smaller side.

    ``sx``/``sy`` (superpoint sets or sizes) are only used to validate the
    matrix shape. Degenerate rows/columns never take part; argmax ties go to
    the smaller index. Returned pairs are always (source, target).
    """
    e = c.entries
    n_rows, n_cols = e.shape
    if sx is not None and sy is not None:
        nx = sx if isinstance(sx, int) else len(sx)
        ny = sy if isinstance(sy, int) else len(sy)
        expected = (nx, ny) if c.rows_are_source else (ny, nx)
        if (n_rows, n_cols) != expected:
            raise ParameterError(f"correlation shape {e.shape} does not match sets {expected}")
    valid = e.copy()
    valid[c.degenerate_rows] = -np.inf
    valid[:, c.degenerate_cols] = -np.inf
    if n_rows <= n_cols:
        keep = np.flatnonzero(~c.degenerate_rows)
        if keep.size and not np.all(c.degenerate_cols):
            best = np.argmax(valid[keep], axis=1)
            rows, cols = keep, best
        else:
            rows = cols = np.zeros(0, int)
    else:
        keep = np.flatnonzero(~c.degenerate_cols)
        if keep.size and not np.all(c.degenerate_rows):
            best = np.argmax(valid[:, keep], axis=0)
            rows, cols = best, keep
        else:
            rows = cols = np.zeros(0, int)
    if len(rows) == 0:
        raise EmptyCorrespondenceError("every candidate row is degenerate")
    w = np.clip(e[rows, cols], 0.0, 1.0)
    pairs = np.stack([rows, cols], axis=1) if c.rows_are_source else np.stack([cols, rows], axis=1)
    return WeightedCorrespondences(pairs, w)


def top_count(fraction: float, count: int) -> int:
    # Guard against 0.15 * 100 = 15.000000000000002 rounding up to 16.
    return min(count, max(1, math.ceil(fraction * count - 1e-9)))


def filter_top_fraction(wc: WeightedCorrespondences,
                        fraction: float = DEFAULT_TOP_FRACTION,
                        min_pairs: int = 3) -> WeightedCorrespondences:
    """Keep the ``ceil(fraction * n)`` highest-weight pairs in original order."""
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must lie in (0, 1], got {fraction}")
    if len(wc) == 0:
        raise EmptyCorrespondenceError("no correspondences to filter")
    k = top_count(fraction, len(wc))
    if k < min_pairs:
        raise UnderdeterminedError(
            f"keeping {k} of {len(wc)} pairs leaves fewer than {min_pairs}")
    order = np.lexsort((np.arange(len(wc)), -wc.weights))
    return wc.subset(np.sort(order[:k]))


def weight_histogram(wc: WeightedCorrespondences, bins: int = 10):
    """Uniform bins over [0, 1] as ``[((lo, hi), count), ...]``."""
    if bins < 1:
        raise ParameterError("bins must be >= 1")
    counts, edges = np.histogram(wc.weights, bins=bins, range=(0.0, 1.0))
    return [((float(edges[i]), float(edges[i + 1])), int(counts[i])) for i in range(bins)]

