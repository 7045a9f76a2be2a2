"""Command-line entry point: ``mmnet {gen,train,eval,cam,verify,archstat}``.

Exit codes: 0 success, 2 usage or missing input, 3 training divergence,
1 failed verification.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("mmnet")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers

def _dims(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected D,H,W integers, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected three positive extents, got {text!r}")
    return dims


def _alpha(text: str) -> float:
    a = float(text)
    if not 0.0 <= a <= 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in [0, 1], got {a}")
    return a


def _split(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+):(\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected a ratio like 4:1, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _need_dir(path, what: str) -> Path:
    p = Path(path)
    if not (p / "manifest.json").is_file():
        raise UsageError(f"{what} {p} not found (no manifest.json)")
    return p


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _apply_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("MMNET_THREADS")
        n = int(env) if env else None
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be positive")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # BLAS keeps its own default
        log.warning("threadpoolctl unavailable; --threads not applied")
        return
    threadpool_limits(n)


def _precision(bits: int):
    return np.float64 if bits == 64 else np.float32


# --------------------------------------------------------------- spec files

def _line_of(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return 1


def load_spec_file(path):
    """Parse an ArchSpec JSON file; errors carry ``path:line:col`` anchors."""
    from .model import ArchSpec, SpecError

    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{p}: no such spec file")
    text = p.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise UsageError(f"{p}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from None
    try:
        return ArchSpec.from_dict(raw)
    except SpecError as e:
        raise UsageError(f"{p}:{_line_of(text, e.key)}:1: {e}") from None
    except (KeyError, TypeError, ValueError) as e:
        key = e.args[0] if isinstance(e, KeyError) else ""
        line = _line_of(text, key) if key else 1
        raise UsageError(f"{p}:{line}:1: invalid spec: {e}") from None


# --------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    from .synth import DatasetSpec, generate_dataset, save_dataset

    try:
        spec = DatasetSpec(dims=args.dims, pairing=args.pairing)
        train_set, test_set = generate_dataset(args.seed, args.n, args.split, spec)
    except ValueError as e:
        raise UsageError(str(e)) from None
    path = save_dataset(args.out, train_set, test_set, seed=args.seed)
    print(json.dumps({"manifest": str(path), "train": len(train_set), "test": len(test_set)}))
    return EXIT_OK


def _datasets(args):
    from .synth import DatasetSpec, generate_dataset, load_dataset

    if args.data:
        return load_dataset(_need_dir(args.data, "dataset"))
    try:
        return generate_dataset(args.seed, args.n, spec=DatasetSpec(dims=args.dims, pairing=args.pairing))
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_train(args) -> int:
    from .experiments import RunConfig
    from .model import MAFConfig, build_model
    from .tensor import default_dtype
    from .train import AugmentConfig, DivergenceError, TrainConfig, predict, train

    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, momentum=args.momentum,
                       seed=args.seed, augment=AugmentConfig(seed=args.seed))
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise UsageError(f"{cfg_path}: no such training config")
        try:
            tcfg = TrainConfig.from_dict(json.loads(cfg_path.read_text()))
        except (json.JSONDecodeError, TypeError, ValueError) as e:
            raise UsageError(f"{cfg_path}: invalid training config: {e}") from None
    train_set, test_set = _datasets(args)
    run = RunConfig(alpha=args.alpha, seed=args.seed, epochs=tcfg.epochs, attention=args.attention,
                    variant=args.variant, n=args.n, dims=train_set.spec.dims)
    spec = load_spec_file(args.spec_file) if args.spec_file else run.spec()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with default_dtype(_precision(args.precision)):
        model = build_model(spec, seed=args.seed, maf=MAFConfig(args.alpha))
        try:
            result = train(model, train_set, test_set, tcfg, log_path=out / "metrics.jsonl",
                           checkpoint_dir=out / "checkpoint")
        except DivergenceError as e:
            print(f"error: training diverged: {e}", file=sys.stderr)
            return EXIT_DIVERGED
        preds = predict(model, test_set)
    summary = {"final_accuracy": float(np.mean(preds.predicted == preds.labels)),
               "best_epoch": result.best_epoch,
               "best_accuracy": max(r["val_accuracy"] for r in result.log),
               "initial_loss": result.initial_loss, "final_loss": result.final_loss,
               "train": tcfg.to_dict(), "alpha": args.alpha, "arch": spec.name}
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def _model_for(args):
    from .model import MAFConfig, build_model, load_checkpoint
    from .tensor import default_dtype

    if args.checkpoint:
        return load_checkpoint(_need_dir(args.checkpoint, "checkpoint"))
    from .experiments import RunConfig
    spec = load_spec_file(args.spec_file) if args.spec_file else \
        RunConfig(variant=args.variant, dims=args.dims).spec()
    with default_dtype(_precision(args.precision)):
        return build_model(spec, seed=args.seed, maf=MAFConfig(args.alpha))


def cmd_eval(args) -> int:
    from .train import evaluate

    train_set, test_set = _datasets(args)
    model = _model_for(args)
    data = test_set if args.split == "test" else train_set
    report = evaluate(model, data).to_dict()
    if args.out:
        _write_json(Path(args.out) / "metrics.json", report)
    print(json.dumps(report))
    return EXIT_OK


def write_pgm(path: Path, img: np.ndarray) -> None:
    """Binary 8-bit PGM of a [0, 1] image."""
    pix = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = pix.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())


def cmd_cam(args) -> int:
    from . import vtf
    from .model import cam

    train_set, test_set = _datasets(args)
    data = test_set if args.split == "test" else train_set
    if not 0 <= args.index < len(data):
        raise UsageError(f"sample index {args.index} outside [0, {len(data)})")
    model = _model_for(args)
    if not 0 <= args.class_index < model.spec.num_classes:
        raise UsageError(f"--class must lie in [0, {model.spec.num_classes})")
    s = data[args.index]
    ma, mb = cam(model, s.volume_a[None], s.volume_b[None], args.class_index)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for tag, m in (("a", ma[0]), ("b", mb[0])):
        vtf.save(out / f"cam_{tag}.vtf", m.astype(np.float32))
        files.append(f"cam_{tag}.vtf")
        for z in range(m.shape[0]):
            write_pgm(out / f"cam_{tag}_z{z:02d}.pgm", m[z])
    info = {"index": args.index, "label": int(s.label), "class": args.class_index,
            "box": [list(b) for b in s.box], "shape": list(ma.shape[1:]), "files": files}
    _write_json(out / "cam.json", info)
    print(json.dumps(info))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    results = run_suite(precision=args.precision, fault=args.fault, seed=args.seed)
    verdict = {"passed": all(r.passed for r in results), "checks": [r.to_dict() for r in results]}
    if args.out:
        _write_json(Path(args.out) / "verify.json", verdict)
    print(json.dumps(verdict, indent=2))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_archstat(args) -> int:
    from .archstat import analyse, compare, model_input
    from .model import SpecError, get_variant

    try:
        spec = load_spec_file(args.spec_file) if args.spec_file else get_variant(args.variant)
        modality = args.dims or spec.input_dims[1:]
        report = analyse(spec, model_input(spec, modality))
        doc = {"report": report.to_dict()}
        tables = [report.to_table(per_layer=args.layers)]
        if args.compare:
            other = get_variant(args.compare)
            doc["comparison"] = compare(spec, other, modality)
            tables.append(analyse(other, model_input(other, modality)).to_table(per_layer=args.layers))
    except SpecError as e:
        raise UsageError(str(e)) from None
    if args.out:
        _write_json(Path(args.out) / "archstat.json", doc)
    print(json.dumps({k: v for k, v in doc.items() if k != "report"} |
                     {"total_params": report.total_params, "total_flops": report.total_flops}))
    for t in tables:
        print(t)
    if args.compare:
        c = doc["comparison"]
        print(f"param ratio {c['param_ratio']:.3f}  flop ratio {c['flop_ratio']:.3f}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmnet", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads (env MMNET_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=out_required, default=None)

    def data_flags(sp):
        sp.add_argument("--data", default=None, help="dataset directory (default: generate from --seed)")
        sp.add_argument("--n", type=int, default=200)
        sp.add_argument("--dims", type=_dims, default=(8, 32, 32))
        sp.add_argument("--pairing", choices=("ratio", "xor"), default="ratio",
                        help="how classes 2 and 3 combine the two modalities")

    def model_flags(sp):
        sp.add_argument("--variant", default="mmnet-tiny")
        sp.add_argument("--spec-file", default=None)
        sp.add_argument("--alpha", type=_alpha, default=0.6)
        sp.add_argument("--precision", type=int, choices=(32, 64), default=32)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    common(g, out_required=True)
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--dims", type=_dims, default=(8, 32, 32))
    g.add_argument("--split", type=_split, default=(4, 1))
    g.add_argument("--pairing", choices=("ratio", "xor"), default="ratio")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    common(t)
    data_flags(t)
    model_flags(t)
    t.add_argument("--attention", choices=("maf", "sam", "none"), default="maf")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch", type=int, default=4)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--config", default=None, help="training config JSON (overrides the flags above)")
    t.set_defaults(func=cmd_train, out="runs/train")

    e = sub.add_parser("eval", help="evaluate a checkpoint (or an untrained model)")
    common(e)
    data_flags(e)
    model_flags(e)
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cam", help="export class activation maps")
    common(c)
    data_flags(c)
    model_flags(c)
    c.add_argument("--checkpoint", default=None)
    c.add_argument("--class", dest="class_index", type=int, required=True)
    c.add_argument("--index", type=int, default=0, help="sample index within the split")
    c.add_argument("--split", choices=("train", "test"), default="test")
    c.set_defaults(func=cmd_cam, out="runs/cam")

    v = sub.add_parser("verify", help="run the self-verification suite")
    common(v)
    v.add_argument("--precision", type=int, choices=(32, 64), default=64)
    v.add_argument("--fault", choices=("conv", "sam", "roc"), default=None,
                   help="inject a deliberate fault (negative control)")
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("archstat", help="parameter/FLOP accounting")
    a.add_argument("--out", default=None)
    a.add_argument("--variant", default="mmnet-tiny")
    a.add_argument("--spec-file", default=None)
    a.add_argument("--compare", default=None, help="second variant for ratios")
    a.add_argument("--dims", type=_dims, default=None, help="per-modality D,H,W")
    a.add_argument("--layers", action="store_true", help="per-layer table")
    a.set_defaults(func=cmd_archstat)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_threads(args.threads)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
