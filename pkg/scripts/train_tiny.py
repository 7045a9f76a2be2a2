"""Train MMNet-tiny on the default synthetic task and report test metrics.

    python scripts/train_tiny.py --epochs 30 --seed 1 --out runs/tiny
"""
import argparse
import json
import logging
from pathlib import Path

from mmnet.experiments import RunConfig, run
from mmnet.train import evaluate


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--dims", default="8,32,32")
    p.add_argument("--pairing", choices=("ratio", "xor"), default="ratio")
    p.add_argument("--out", default="runs/tiny")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig(alpha=args.alpha, seed=args.seed, epochs=args.epochs, pairing=args.pairing,
                    dims=tuple(int(v) for v in args.dims.split(",")))
    res = run(cfg, log_path=out / "metrics.jsonl", checkpoint_dir=out / "checkpoint")
    summary = res.summary() | {"final_metrics": evaluate(res.model, res.test_set).to_dict()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
