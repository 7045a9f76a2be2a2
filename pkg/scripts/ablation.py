"""HDB-only vs HDB+SAM vs HDB+SAM+MAF, averaged over seeds on the xor task.

    python scripts/ablation.py --seeds 1,2,3
"""
import argparse
import json
import logging

import numpy as np

from mmnet.experiments import ABLATIONS, RunConfig, sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--dims", default="8,16,16")
    p.add_argument("--pairing", choices=("ratio", "xor"), default="xor")
    p.add_argument("--out", default="runs/ablation")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    dims = tuple(int(v) for v in args.dims.split(","))
    table = {}
    for name, (attention, alpha) in ABLATIONS.items():
        configs = [RunConfig(alpha=alpha, attention=attention, seed=int(s), epochs=args.epochs, dims=dims,
                             pairing=args.pairing) for s in args.seeds.split(",")]
        rows = sweep(configs, f"{args.out}/{name}")
        accs = [r["final_accuracy"] for r in rows]
        table[name] = {"mean": float(np.mean(accs)), "runs": accs}
    print(json.dumps(table, indent=2))


if __name__ == "__main__":
    main()
