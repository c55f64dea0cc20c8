"""Superpoint extraction and handcrafted local descriptors.

Descriptors stand in for learned superpoint features: each row concatenates,
per neighborhood scale, the normalized covariance spectrum and a histogram of
angles between neighbor offsets and the local normal. Externally computed
features can be loaded with :func:`load_features` instead.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, EmptyInputError, FormatError, ParameterError
from .geom import PointCloud, SpatialIndex
from .parallel import parallel_map, thread_count


@dataclass(frozen=True)
class FeatureMatrix:
    rows: np.ndarray
    degenerate: Optional[np.ndarray] = None

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ParameterError(f"feature rows must be 2-D, got shape {rows.shape}")
        if rows.shape[1] < 2:
            raise ParameterError(f"feature dimension must be >= 2, got {rows.shape[1]}")
        if not np.all(np.isfinite(rows)):
            raise DataError("feature entries must be finite")
        rows = rows.copy()
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        deg = (np.zeros(len(rows), dtype=bool) if self.degenerate is None
               else np.asarray(self.degenerate, dtype=bool).copy())
        if deg.shape != (len(rows),):
            raise ParameterError("degenerate flags must match the row count")
        deg.setflags(write=False)
        object.__setattr__(self, "degenerate", deg)

    def __len__(self):
        return len(self.rows)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class SuperpointSet:
    points: PointCloud
    parent_indices: tuple

    def __len__(self):
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points.points


@dataclass(frozen=True)
class DescriptorConfig:
    """Neighborhood radius is in meters; ``radius_scales`` multiply it.

    ``feature_dim`` is derived from the layout; pass it only to assert the
    expected width.
    """

    neighborhood_radius: float = 0.1
    histogram_bins: int = 6
    feature_dim: Optional[int] = None
    normalize_rows: bool = True
    radius_scales: tuple = (1.0,)

    def __post_init__(self):
        if not self.neighborhood_radius > 0:
            raise ParameterError("neighborhood_radius must be > 0")
        if self.histogram_bins < 2:
            raise ParameterError("histogram_bins must be >= 2")
        scales = tuple(float(s) for s in self.radius_scales)
        if not scales or min(scales) <= 0:
            raise ParameterError("radius_scales must be positive")
        object.__setattr__(self, "radius_scales", scales)
        expected = len(scales) * (3 + self.histogram_bins)
        if self.feature_dim is None:
            object.__setattr__(self, "feature_dim", expected)
        elif self.feature_dim != expected:
            raise ParameterError(
                f"feature_dim {self.feature_dim} inconsistent with layout "
                f"({len(scales)} scales x (3 + {self.histogram_bins} bins) = {expected})")


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> SuperpointSet:
    """One centroid per occupied voxel, ordered by voxel coordinate."""
    if not voxel_size > 0:
        raise ParameterError(f"voxel_size must be > 0, got {voxel_size}")
    if len(cloud) == 0:
        raise EmptyInputError("cannot downsample an empty cloud")
    keys = np.floor(cloud.points / voxel_size).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    sums = np.add.reduceat(cloud.points[order], starts, axis=0)
    centroids = sums / counts[:, None]
    parents = tuple(order[s:s + c] for s, c in zip(starts, counts))
    normals = None
    if cloud.normals is not None:
        nsum = np.add.reduceat(cloud.normals[order], starts, axis=0)
        norm = np.linalg.norm(nsum, axis=1, keepdims=True)
        normals = np.where(norm > 1e-12, nsum / np.maximum(norm, 1e-300),
                           cloud.normals[order[starts]])
    return SuperpointSet(PointCloud(centroids, normals), parents)


def _flatten(neighbors):
    counts = np.array([len(n) for n in neighbors], dtype=int)
    flat = np.concatenate(neighbors) if len(neighbors) else np.zeros(0, int)
    owner = np.repeat(np.arange(len(neighbors)), counts)
    return flat.astype(int), owner, counts


def _local_covariances(points, centers, neighbors):
    """Covariance and mean of each neighbor set; rows need >= 1 neighbor."""
    flat, owner, counts = _flatten(neighbors)
    n = len(neighbors)
    mean = np.zeros((n, 3))
    np.add.at(mean, owner, points[flat])
    mean /= counts[:, None]
    off = points[flat] - mean[owner]
    cov = np.zeros((n, 3, 3))
    np.add.at(cov, owner, off[:, :, None] * off[:, None, :])
    cov /= counts[:, None, None]
    return cov, mean


def _descriptor_block(points, centers, cloud_centroid, index, cfg):
    s = len(centers)
    bins = cfg.histogram_bins
    out = np.zeros((s, len(cfg.radius_scales) * (3 + bins)))
    degenerate = np.zeros(s, dtype=bool)
    normals = np.zeros((s, 3))
    base = cfg.neighborhood_radius
    neigh_by_scale = [index.radius_batch(centers, base * sc) for sc in cfg.radius_scales]
    base_neigh = index.radius_batch(centers, base)
    counts = np.array([len(n) for n in base_neigh])
    degenerate |= counts < 3
    for nb in neigh_by_scale:
        degenerate |= np.array([len(n) for n in nb]) < 3
    ok = np.flatnonzero(~degenerate)
    if len(ok) == 0:
        return out, degenerate, normals
    cov, _ = _local_covariances(points, centers[ok], [base_neigh[i] for i in ok])
    _, vecs = np.linalg.eigh(cov)
    nrm = vecs[:, :, 0]
    flip = np.einsum("ij,ij->i", nrm, cloud_centroid - centers[ok]) < 0
    nrm[flip] *= -1.0
    normals[ok] = nrm

    col = 0
    for nb in neigh_by_scale:
        sub = [nb[i] for i in ok]
        cov, _ = _local_covariances(points, centers[ok], sub)
        vals = np.clip(np.linalg.eigvalsh(cov)[:, ::-1], 0.0, None)
        total = vals.sum(axis=1)
        flat_deg = total <= 0
        vals = vals / np.where(flat_deg, 1.0, total)[:, None]
        out[ok, col:col + 3] = vals
        degenerate[ok[flat_deg]] = True

        flat, owner, cnt = _flatten(sub)
        off = points[flat] - centers[ok][owner]
        length = np.linalg.norm(off, axis=1)
        valid = length > 1e-12
        cosang = np.abs(np.einsum("ij,ij->i", off[valid], nrm[owner[valid]])) / length[valid]
        ang = np.arccos(np.clip(cosang, 0.0, 1.0))
        b = np.minimum((ang / (np.pi / 2) * bins).astype(int), bins - 1)
        hist = np.zeros((len(ok), bins))
        np.add.at(hist, (owner[valid], b), 1.0)
        tot = hist.sum(axis=1, keepdims=True)
        hist = hist / np.where(tot > 0, tot, 1.0)
        out[ok, col + 3:col + 3 + bins] = hist
        col += 3 + bins
    out[degenerate] = 0.0
    return out, degenerate, normals


def compute_local_descriptors(sp: SuperpointSet, full: PointCloud,
                              cfg: DescriptorConfig = DescriptorConfig(),
                              threads: Optional[int] = None,
                              return_normals: bool = False):
    """Per-superpoint descriptor rows computed from neighborhoods in ``full``.

    Superpoints with fewer than three neighbors at any scale get a zero row
    and are flagged degenerate; rows are never dropped so indices stay aligned
    with ``sp``.
    """
    if len(full) == 0:
        raise EmptyInputError("full cloud is empty")
    points = full.points
    centers = sp.xyz
    index = SpatialIndex(points)
    centroid = points.mean(axis=0)
    n_threads = thread_count() if threads is None else max(1, threads)
    chunk = max(256, -(-len(centers) // n_threads))
    spans = [(a, min(a + chunk, len(centers))) for a in range(0, len(centers), chunk)]
    blocks = parallel_map(
        lambda ab: _descriptor_block(points, centers[ab[0]:ab[1]], centroid, index, cfg),
        spans, threads=n_threads)
    if blocks:
        rows = np.concatenate([b[0] for b in blocks])
        degenerate = np.concatenate([b[1] for b in blocks])
        normals = np.concatenate([b[2] for b in blocks])
    else:
        rows = np.zeros((0, cfg.feature_dim))
        degenerate = np.zeros(0, dtype=bool)
        normals = np.zeros((0, 3))
    if cfg.normalize_rows:
        norm = np.linalg.norm(rows, axis=1, keepdims=True)
        rows = np.where(norm > 0, rows / np.where(norm > 0, norm, 1.0), 0.0)
    fm = FeatureMatrix(rows, degenerate)
    return (fm, normals) if return_normals else fm


def estimate_normals(cloud: PointCloud, radius: float) -> PointCloud:
    """Unit normals from neighborhood covariance, oriented toward the centroid."""
    index = SpatialIndex(cloud.points)
    neigh = index.radius_batch(cloud.points, radius)
    cov, _ = _local_covariances(cloud.points, cloud.points,
                                [n if len(n) else np.array([i]) for i, n in enumerate(neigh)])
    _, vecs = np.linalg.eigh(cov)
    nrm = vecs[:, :, 0]
    flip = np.einsum("ij,ij->i", nrm, cloud.points.mean(0) - cloud.points) < 0
    nrm[flip] *= -1.0
    return PointCloud(cloud.points, nrm / np.linalg.norm(nrm, axis=1, keepdims=True))


TEXT_MAGIC = "SPFEAT"
BINARY_MAGIC = b"SPFB"


def save_features(fm: FeatureMatrix, path, binary: bool = False) -> None:
    path = Path(path)
    if binary:
        header = BINARY_MAGIC + struct.pack("<II", len(fm), fm.dim)
        path.write_bytes(header + np.ascontiguousarray(fm.rows, dtype="<f4").tobytes())
        return
    lines = [f"{TEXT_MAGIC} v1 {len(fm)} {fm.dim}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in fm.rows)
    path.write_text("\n".join(lines) + "\n")


def load_features(path) -> FeatureMatrix:
    """Read a text (``SPFEAT v1 N D``) or binary (``SPFB``) feature file."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == BINARY_MAGIC:
        return _load_binary(data, path)
    return _load_text(data, path)


def _load_binary(data: bytes, path) -> FeatureMatrix:
    if len(data) < 12:
        raise FormatError("truncated binary header", path=path, offset=len(data))
    n, d = struct.unpack_from("<II", data, 4)
    expected = 12 + 4 * n * d
    if len(data) != expected:
        found_rows = (len(data) - 12) // (4 * d) if d else 0
        raise FormatError(
            f"expected {n} rows of {d} float32 ({expected} bytes), found {len(data)} bytes "
            f"({found_rows} complete rows)", path=path, offset=min(len(data), expected))
    rows = np.frombuffer(data, dtype="<f4", offset=12).astype(float).reshape(n, d)
    if not np.all(np.isfinite(rows)):
        bad = int(np.flatnonzero(~np.isfinite(rows.reshape(-1)))[0])
        raise DataError(f"{path}: non-finite value at byte offset {12 + 4 * bad}")
    return FeatureMatrix(rows)


def _load_text(data: bytes, path) -> FeatureMatrix:
    text = data.decode("ascii", errors="replace")
    lines = text.splitlines(keepends=True)
    if not lines:
        raise FormatError("empty feature file", path=path, offset=0)
    head = lines[0].split()
    if len(head) != 4 or head[0] != TEXT_MAGIC or head[1] != "v1":
        raise FormatError(f"bad header {lines[0].strip()!r}", path=path, offset=0)
    try:
        n, d = int(head[2]), int(head[3])
    except ValueError:
        raise FormatError(f"bad header counts {lines[0].strip()!r}", path=path, offset=0) from None
    body = [ln for ln in lines[1:]]
    while body and not body[-1].strip():
        body.pop()
    offset = len(lines[0].encode())
    if len(body) != n:
        raise FormatError(f"expected {n} rows, found {len(body)}", path=path,
                          offset=offset + sum(len(b.encode()) for b in body))
    rows = np.zeros((n, d))
    for i, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != d:
            raise FormatError(f"row {i} has {len(parts)} values, expected {d}",
                              path=path, offset=offset)
        try:
            rows[i] = [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"row {i} is not numeric", path=path, offset=offset) from None
        if not np.all(np.isfinite(rows[i])):
            raise DataError(f"{path}: non-finite value in row {i} (byte offset {offset})")
        offset += len(ln.encode())
    return FeatureMatrix(rows.reshape(n, d))
