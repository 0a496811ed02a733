"""Training-loss curves with and without hard sampling, and steps to a loss threshold.

    python3 scripts/run_convergence.py --seeds 5 --threshold 0.4 --curves curves.tsv
"""
import argparse

import numpy as np

from placededup.pipeline import prepare_seed, run_preset, steps_to_threshold


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--threshold", type=float, default=0.4)
    ap.add_argument("--window", type=int, default=20)
    ap.add_argument("--variants", default="PE,PEH")
    ap.add_argument("--beta", type=float, help="override the hard-selection slack")
    ap.add_argument("--curves", help="write per-step smoothed losses of seed 0 as TSV")
    args = ap.parse_args()

    variants = args.variants.split(",")
    over = {} if args.beta is None else {"beta": args.beta}
    steps = {v: [] for v in variants}
    curves = {}
    for seed in range(args.seeds):
        data = prepare_seed(seed)
        for v in variants:
            _, result = run_preset(data, v, seed=seed, **(over if v != "PE" else {}))
            steps[v].append(steps_to_threshold(result.history, args.threshold, args.window))
            if seed == 0:
                w = np.ones(args.window) / args.window
                curves[v] = np.convolve(result.history, w, mode="valid")
        print(seed, {v: steps[v][-1] for v in variants}, flush=True)
    base = np.array([np.inf if s is None else s for s in steps[variants[0]]], dtype=float)
    for v in variants[1:]:
        other = np.array([np.inf if s is None else s for s in steps[v]], dtype=float)
        print(f"median steps ratio {v}/{variants[0]}: {np.median(other / base):.3f}")
    if args.curves:
        n = min(len(c) for c in curves.values())
        with open(args.curves, "w", encoding="utf-8") as fh:
            fh.write("step\t" + "\t".join(variants) + "\n")
            for i in range(n):
                fh.write(f"{i + args.window}\t" + "\t".join(f"{curves[v][i]:.6f}" for v in variants) + "\n")


if __name__ == "__main__":
    main()
