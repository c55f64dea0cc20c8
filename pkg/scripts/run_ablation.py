"""Run an ablation suite and print the table.

    python3 scripts/run_ablation.py scripts/suites/outlier_filtering.toml --out table.csv
"""
import argparse
import sys
import time

from superalign.bench import load_suite, parse_suite, DEFAULT_SUITE, run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("suite", nargs="?", help="TOML suite (default: built-in)")
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out", help="also write the CSV here")
    args = ap.parse_args()

    suite = load_suite(args.suite) if args.suite else parse_suite(DEFAULT_SUITE)
    t0 = time.perf_counter()
    report = run_ablation(suite, threads=args.threads)
    print(f"{len(suite.pairs)} pairs, {len(suite.combos)} combos, {time.perf_counter() - t0:.1f} s")
    print(f"{'combo':34s} {'RRE':>8s} {'RTE':>8s} {'RR':>5s} {'IR':>5s} {'time':>7s}")
    for r in report.rows:
        print(f"{r.combo.name:34s} {r.mean_rre:8.3f} {r.mean_rte:8.4f} {r.rr:5.2f} "
              f"{r.mean_ir:5.2f} {r.mean_time:7.3f}")
        for k, err in r.failures:
            print(f"    pair {k} failed: {err}")
    if args.out:
        with open(args.out, "w") as f:
            f.write(report.to_csv())
    return 1 if any(r.failures for r in report.rows) else 0


if __name__ == "__main__":
    sys.exit(main())
