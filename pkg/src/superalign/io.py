"""Text file formats: ASCII PLY / XYZ clouds, 4x4 pose files, correspondence
CSV and JSON registration reports."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geom import PointCloud, Se3Transform, orthogonality_residual, orthonormalize
from .matching import WeightedCorrespondences, weight_histogram

POSE_TOL = 1e-5


def _floats(tokens, path, lineno, expected=None):
    if expected is not None and len(tokens) != expected:
        raise FormatError(f"expected {expected} values, found {len(tokens)}", path=path, line=lineno)
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise FormatError(f"non-numeric value in {' '.join(tokens)!r}", path=path, line=lineno) from None
    if not all(np.isfinite(vals)):
        raise FormatError("non-finite value", path=path, line=lineno)
    return vals


def _read_text(path) -> list:
    path = Path(path)
    try:
        return path.read_text().splitlines()
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: no such file") from None
    except UnicodeDecodeError:
        raise FormatError("not a text file", path=path) from None


def _read_ply(lines, path) -> PointCloud:
    if not lines or lines[0].strip() != "ply":
        raise FormatError("missing 'ply' magic", path=path, line=1)
    elements = []      # [name, count, [properties]]
    fmt_seen = False
    body = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise FormatError(f"only ASCII PLY is supported, got {raw.strip()!r}",
                                  path=path, line=lineno)
            fmt_seen = True
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise FormatError(f"malformed element line {raw.strip()!r}", path=path, line=lineno)
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise FormatError("property before any element", path=path, line=lineno)
            if len(tok) < 3:
                raise FormatError(f"malformed property line {raw.strip()!r}", path=path, line=lineno)
            elements[-1][2].append("list" if tok[1] == "list" else tok[-1])
        elif tok[0] == "end_header":
            body = lineno
            break
        else:
            raise FormatError(f"unexpected header line {raw.strip()!r}", path=path, line=lineno)
    if body is None:
        raise FormatError("missing end_header", path=path, line=len(lines))
    if not fmt_seen:
        raise FormatError("missing format line", path=path, line=body)
    vertex = [e for e in elements if e[0] == "vertex"]
    if not vertex:
        raise FormatError("no vertex element", path=path, line=body)
    props = vertex[0][2]
    try:
        cols = [props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise FormatError("vertex element lacks x/y/z", path=path, line=body) from None
    has_normals = all(c in props for c in ("nx", "ny", "nz"))
    ncols = [props.index(c) for c in ("nx", "ny", "nz")] if has_normals else []
    data = [(i, ln) for i, ln in enumerate(lines[body:], start=body + 1) if ln.strip()]
    pos = 0
    points, normals = [], []
    for name, count, eprops in elements:
        if pos + count > len(data):
            last = data[-1][0] if data else body
            raise FormatError(f"header declares {count} {name} rows, file ends early",
                              path=path, line=last)
        for lineno, ln in data[pos:pos + count]:
            tok = ln.split()
            if name != "vertex":
                # Faces and other elements are skipped; only check they parse.
                _floats(tok, path, lineno)
                continue
            vals = _floats(tok, path, lineno, expected=len(eprops))
            points.append([vals[c] for c in cols])
            if has_normals:
                normals.append([vals[c] for c in ncols])
        pos += count
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} rows beyond the declared element counts",
                          path=path, line=data[pos][0])
    pts = np.array(points, float).reshape(-1, 3)
    return PointCloud(pts, np.array(normals, float).reshape(-1, 3) if has_normals else None)


def _read_xyz(lines, path) -> PointCloud:
    points, normals = [], []
    width = None
    for lineno, ln in enumerate(lines, start=1):
        tok = ln.split("#", 1)[0].replace(",", " ").split()
        if not tok:
            continue
        if len(tok) not in (3, 6):
            raise FormatError(f"expected 3 or 6 values, found {len(tok)}", path=path, line=lineno)
        if width is None:
            width = len(tok)
        elif len(tok) != width:
            raise FormatError(f"row width {len(tok)} differs from earlier rows ({width})",
                              path=path, line=lineno)
        vals = _floats(tok, path, lineno)
        points.append(vals[:3])
        if width == 6:
            normals.append(vals[3:])
    return PointCloud(np.array(points, float).reshape(-1, 3),
                      np.array(normals, float).reshape(-1, 3) if width == 6 else None)


def read_cloud(path) -> PointCloud:
    """Read an ASCII PLY or XYZ text cloud, keeping file order."""
    lines = _read_text(path)
    if lines and lines[0].strip() == "ply":
        return _read_ply(lines, path)
    return _read_xyz(lines, path)


def write_cloud(cloud: PointCloud, path) -> None:
    """ASCII PLY for ``.ply`` paths, XYZ text otherwise; 9 significant digits."""
    path = Path(path)
    cols = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    rows = "".join(" ".join(f"{v:.9g}" for v in r) + "\n" for r in cols)
    if path.suffix.lower() == ".ply":
        header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
                  "property float x", "property float y", "property float z"]
        if cloud.normals is not None:
            header += ["property float nx", "property float ny", "property float nz"]
        header.append("end_header")
        path.write_text("\n".join(header) + "\n" + rows)
    else:
        path.write_text(rows)


def read_pose(path) -> Se3Transform:
    """Read a row-major 4x4 homogeneous matrix."""
    lines = [(i, ln) for i, ln in enumerate(_read_text(path), start=1) if ln.strip()]
    if len(lines) != 4:
        raise FormatError(f"expected 4 rows, found {len(lines)}", path=path,
                          line=lines[-1][0] if lines else 1)
    m = np.array([_floats(ln.split(), path, i, expected=4) for i, ln in lines])
    if not np.allclose(m[3], [0, 0, 0, 1], rtol=0, atol=POSE_TOL):
        raise FormatError(f"bottom row must be 0 0 0 1, got {m[3].tolist()}", path=path,
                          line=lines[3][0])
    r = m[:3, :3]
    if orthogonality_residual(r) > POSE_TOL or np.linalg.det(r) <= 0:
        raise FormatError("upper-left block is not a rotation within 1e-5", path=path,
                          line=lines[0][0])
    return Se3Transform(orthonormalize(r), m[:3, 3])


def format_pose(t: Se3Transform) -> str:
    # Full round-trip precision; fixed-point rows would lose ~1e-7 per entry.
    return "".join(" ".join(f"{v:.17g}" for v in row) + "\n" for row in t.as_matrix())


def write_pose(t: Se3Transform, path) -> None:
    Path(path).write_text(format_pose(t))


def format_correspondences(wc: WeightedCorrespondences) -> str:
    lines = ["src_idx,dst_idx,weight"]
    lines += [f"{int(i)},{int(j)},{w:.6f}" for (i, j), w in zip(wc.pairs, wc.weights)]
    return "\n".join(lines) + "\n"


def write_correspondences(wc: WeightedCorrespondences, path) -> None:
    Path(path).write_text(format_correspondences(wc))


def read_correspondences(path) -> WeightedCorrespondences:
    lines = _read_text(path)
    if not lines or lines[0].strip() != "src_idx,dst_idx,weight":
        raise FormatError("missing header src_idx,dst_idx,weight", path=path, line=1)
    pairs, weights = [], []
    for lineno, ln in enumerate(lines[1:], start=2):
        if not ln.strip():
            continue
        tok = ln.split(",")
        if len(tok) != 3:
            raise FormatError(f"expected 3 fields, found {len(tok)}", path=path, line=lineno)
        try:
            pairs.append((int(tok[0]), int(tok[1])))
        except ValueError:
            raise FormatError("indices must be integers", path=path, line=lineno) from None
        weights.append(_floats(tok[2:], path, lineno)[0])
    return WeightedCorrespondences(np.array(pairs, int).reshape(-1, 2), np.array(weights))


def _json(obj, depth: int = 0) -> str:
    """JSON text with every float printed as fixed six decimals."""
    pad, inner = "  " * depth, "  " * (depth + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_json(v, depth + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _json(v, depth + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        # JSON has no NaN/inf; failed estimates report null.
        return f"{float(obj):.6f}" if np.isfinite(obj) else "null"
    if obj is None:
        return "null"
    return json.dumps(obj)


def build_report(result, filter_fraction: float, histogram_bins: int = 10,
                 deterministic: bool = False) -> dict:
    """Report dict for a :class:`RegistrationResult`.

    ``deterministic`` zeroes wall-clock timings so reruns compare byte-equal.
    """
    timings = {k: (0.0 if deterministic else float(v)) for k, v in sorted(result.timing.items())}
    timings["total"] = 0.0 if deterministic else float(sum(result.timing.values()))
    hist = weight_histogram(result.correspondences, histogram_bins)
    return {
        "transform": [float(v) for v in result.transform.as_matrix().reshape(-1)],
        "residual": float(result.residual),
        "num_correspondences": int(len(result.correspondences)),
        "filter_fraction": float(filter_fraction),
        "timings": timings,
        "weight_histogram": [{"lo": lo, "hi": hi, "count": n} for (lo, hi), n in hist],
        "failed": bool(result.failed),
        "stalled": bool(result.stalled),
    }


def dumps_report(report: dict) -> str:
    return _json(report) + "\n"


def write_report(report: dict, path) -> None:
    Path(path).write_text(dumps_report(report))
