"""Train every ablation variant on synthetic data and tabulate ACC per seed.

    python3 scripts/run_ablation.py --seeds 5
    python3 scripts/run_ablation.py --flip-rates 0.05,0.15,0.40 --variants PEHA,PEHAD
"""
import argparse
import logging
import time

import numpy as np

from placededup.pipeline import ABLATION, ablation, prepare_seed


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--true-places", type=int, default=2000)
    ap.add_argument("--dup-rate", type=float, default=1.5)
    ap.add_argument("--flip-rates", default="0.05,0.15,0.30")
    ap.add_argument("--variants", default=",".join(ABLATION))
    ap.add_argument("--out", help="write the table as TSV here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    flips = tuple(float(x) for x in args.flip_rates.split(","))
    variants = args.variants.split(",")
    t0 = time.perf_counter()
    datasets = [prepare_seed(s, n_true_places=args.true_places, dup_rate=args.dup_rate,
                             n_sources=len(flips), flip_rates=flips) for s in range(args.seeds)]
    scores = ablation(datasets, variants)
    rows = ["seed\t" + "\t".join(variants)]
    rows += [f"{s}\t" + "\t".join(f"{scores[v][s]:.4f}" for v in variants) for s in range(args.seeds)]
    rows.append("mean\t" + "\t".join(f"{np.mean(scores[v]):.4f}" for v in variants))
    rows.append("std\t" + "\t".join(f"{np.std(scores[v]):.4f}" for v in variants))
    table = "\n".join(rows)
    print(table)
    print(f"# {time.perf_counter() - t0:.0f}s")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")


if __name__ == "__main__":
    main()
