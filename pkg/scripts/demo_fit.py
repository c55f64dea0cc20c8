"""Toy end-to-end fit over several seeds: loss reduction and RRE before/after."""
import argparse

from superalign.toyfit import make_toy_instance, toy_end_to_end_fit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--step-size", type=float, default=10.0)
    ap.add_argument("--superpoints", type=int, default=64)
    args = ap.parse_args()

    print("seed  loss0     lossN     drop   rre0     rreN")
    for seed in range(args.seeds):
        tr = toy_end_to_end_fit(make_toy_instance(seed=seed, n=args.superpoints),
                                steps=args.steps, step_size=args.step_size)
        flag = "  diverged" if tr.diverged else ""
        print(f"{seed:4d}  {tr.loss[0]:8.4f}  {tr.loss[-1]:8.4f}  {1 - tr.loss[-1] / tr.loss[0]:5.2f}"
              f"  {tr.rre[0]:7.2f}  {tr.rre[-1]:7.2f}{flag}")


if __name__ == "__main__":
    main()
