"""Command-line entry point: ``superalign {register,match,eval,bench,demo-fit}``.

Exit codes: 0 success, 1 recoverable pipeline failure (flagged or
unregistrable pair), 2 usage or file-format errors.

Output files are reproducible by default: wall-clock timings are written as
zero unless ``--timings`` is passed.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .bench import DEFAULT_SUITE, load_suite, parse_suite, run_ablation
from .config import PipelineConfig, apply_overrides, load_config
from .errors import FormatError, ParameterError, RegistrationError
from .geom import SpatialIndex
from .io import (
    build_report,
    dumps_report,
    format_correspondences,
    format_pose,
    read_cloud,
    read_correspondences,
    read_pose,
)
from .matching import WeightedCorrespondences
from .metrics import ThresholdConfig, chamfer_distance, inlier_ratio, rre, rte
from .pipeline import correlate, prepare, register_pair, select
from .toyfit import make_toy_instance, toy_end_to_end_fit

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class _UsageError(Exception):
    pass


def _emit(text: str, path=None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    items = []
    for item in args.set or []:
        if "=" not in item:
            raise _UsageError(f"--set expects key=value, got {item!r}")
        items.append(tuple(item.split("=", 1)))
    if getattr(args, "matcher", None):
        items.append(("matcher.name", args.matcher))
    if getattr(args, "top_fraction", None) is not None:
        items.append(("filter_fraction", repr(args.top_fraction)))
    if getattr(args, "estimator", None):
        items.append(("estimator", args.estimator))
    return apply_overrides(cfg, items)


def _cmd_register(args) -> int:
    cfg = _config(args)
    x, y = read_cloud(args.source), read_cloud(args.target)
    try:
        res = register_pair(x, y, cfg)
    except RegistrationError as exc:
        if isinstance(exc, (FormatError, ParameterError)):
            raise
        print(f"registration failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    report = build_report(res, cfg.filter_fraction, cfg.report.histogram_bins,
                          deterministic=not args.timings)
    if args.out_pose:
        _emit(format_pose(res.transform), args.out_pose)
    else:
        _emit(format_pose(res.transform))
    if args.out_report:
        _emit(dumps_report(report), args.out_report)
    if res.flagged:
        print("registration flagged: " + ("failed" if res.failed else "stalled"), file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def _cmd_match(args) -> int:
    cfg = _config(args)
    x, y = read_cloud(args.source), read_cloud(args.target)
    try:
        front = prepare(x, y, cfg)
        wc = select(front, correlate(front, cfg), cfg)
    except RegistrationError as exc:
        if isinstance(exc, (FormatError, ParameterError)):
            raise
        print(f"matching failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    _emit(format_correspondences(wc), args.out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    est, gt = read_pose(args.est), read_pose(args.gt)
    lines = [f"rre {rre(est, gt):.6f}", f"rte {rte(est, gt):.6f}"]
    if (args.source is None) != (args.target is None):
        raise _UsageError("--source and --target must be given together")
    if args.source is not None:
        x, y = read_cloud(args.source), read_cloud(args.target)
        lines.append(f"chamfer {chamfer_distance(x.transformed(est), y):.6f}")
        if args.correspondences:
            wc = read_correspondences(args.correspondences)
            if len(wc) and (wc.source_idx.max() >= len(x) or wc.target_idx.max() >= len(y)):
                raise FormatError("correspondence index out of range", path=args.correspondences)
        else:
            # Pairs induced by the estimate: each source point and its nearest
            # target neighbor after applying ``est``.
            _, j = SpatialIndex(y.points).nearest(est.apply(x.points))
            wc = WeightedCorrespondences(np.stack([np.arange(len(x)), j], axis=1), np.ones(len(x)))
        if len(wc):
            thr = ThresholdConfig(ir_distance_max=args.ir_threshold)
            lines.append(f"inlier_ratio {inlier_ratio(wc, x, y, gt, thr):.6f}")
    _emit("\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_bench(args) -> int:
    suite = load_suite(args.suite) if args.suite else parse_suite(DEFAULT_SUITE)
    report = run_ablation(suite, threads=args.threads)
    _emit(report.to_csv(deterministic=not args.timings), args.out)
    failed = any(r.failures for r in report.rows)
    return EXIT_FAILED if failed else EXIT_OK


def _cmd_demo_fit(args) -> int:
    inst = make_toy_instance(seed=args.seed, n=args.superpoints)
    trace = toy_end_to_end_fit(inst, steps=args.steps, step_size=args.step_size)
    rows = ["step,loss,rre_deg"]
    rows += [f"{k},{l:.6f},{r:.6f}" for k, (l, r) in enumerate(zip(trace.loss, trace.rre))]
    _emit("\n".join(rows) + "\n", args.out)
    return EXIT_FAILED if trace.diverged else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="superalign", description="Correspondence-weighted point cloud registration.")
    sub = p.add_subparsers(dest="command", required=True)

    def pipeline_opts(sp):
        sp.add_argument("--source", required=True, help="source cloud (PLY or XYZ)")
        sp.add_argument("--target", required=True, help="target cloud (PLY or XYZ)")
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")

    r = sub.add_parser("register", help="estimate the pose mapping source onto target")
    pipeline_opts(r)
    r.add_argument("--matcher", choices=["softmax", "dual", "sinkhorn"])
    r.add_argument("--estimator", choices=["weighted_kabsch", "ransac", "kabsch+icp"])
    r.add_argument("--out-pose", help="pose file (default: stdout)")
    r.add_argument("--out-report", help="JSON report")
    r.add_argument("--timings", action="store_true", help="record wall-clock stage timings")
    r.set_defaults(func=_cmd_register)

    m = sub.add_parser("match", help="write weighted correspondences as CSV")
    pipeline_opts(m)
    m.add_argument("--matcher", choices=["softmax", "dual", "sinkhorn"], default="softmax")
    m.add_argument("--top-fraction", type=float)
    m.add_argument("--out", help="CSV path (default: stdout)")
    m.set_defaults(func=_cmd_match)

    e = sub.add_parser("eval", help="compare an estimated pose against ground truth")
    e.add_argument("--est", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--source")
    e.add_argument("--target")
    e.add_argument("--correspondences", help="CSV with indices into --source/--target")
    e.add_argument("--ir-threshold", type=float, default=ThresholdConfig().ir_distance_max)
    e.set_defaults(func=_cmd_eval)

    b = sub.add_parser("bench", help="run an ablation suite")
    b.add_argument("--suite", help="TOML suite (default: built-in ablation suite)")
    b.add_argument("--out", help="CSV path (default: stdout)")
    b.add_argument("--threads", type=int, help="override SUPERALIGN_THREADS")
    b.add_argument("--timings", action="store_true", help="record wall-clock times")
    b.set_defaults(func=_cmd_bench)

    d = sub.add_parser("demo-fit", help="toy end-to-end optimization trace")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--steps", type=int, default=200)
    d.add_argument("--step-size", type=float, default=10.0)
    d.add_argument("--superpoints", type=int, default=64)
    d.add_argument("--out", help="CSV path (default: stdout)")
    d.set_defaults(func=_cmd_demo_fit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"superalign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"superalign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ParameterError) as exc:
        print(f"superalign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RegistrationError as exc:
        print(f"superalign: failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
