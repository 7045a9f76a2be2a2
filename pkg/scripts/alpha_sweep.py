"""Sweep the MAF blend factor alpha over several seeds on the xor task.

    python scripts/alpha_sweep.py --alphas 0,0.2,0.4,0.6,0.8,1 --seeds 1,2,3
"""
import argparse
import json
import logging
from collections import defaultdict

import numpy as np

from mmnet.experiments import RunConfig, sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--alphas", default="0,0.6,1")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--dims", default="8,16,16")
    p.add_argument("--pairing", choices=("ratio", "xor"), default="xor")
    p.add_argument("--out", default="runs/alpha_sweep")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    dims = tuple(int(v) for v in args.dims.split(","))
    configs = [RunConfig(alpha=float(a), seed=int(s), epochs=args.epochs, dims=dims, pairing=args.pairing)
               for a in args.alphas.split(",") for s in args.seeds.split(",")]
    rows = sweep(configs, args.out)
    by_alpha = defaultdict(list)
    for r in rows:
        by_alpha[r["alpha"]].append(r["final_accuracy"])
    table = {a: {"mean": float(np.mean(v)), "runs": v} for a, v in sorted(by_alpha.items())}
    print(json.dumps(table, indent=2))


if __name__ == "__main__":
    main()
