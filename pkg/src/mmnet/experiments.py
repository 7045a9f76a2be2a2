"""Reusable desk-scale experiment runners (training runs, alpha sweeps, ablations)."""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ArchSpec, DualStreamModel, MAFConfig, build_model, get_variant
from .synth import Dataset, DatasetSpec, generate_dataset
from .train import Predictions, TrainConfig, TrainResult, predict, restore, train

ABLATIONS = {"hdb": ("none", 1.0), "hdb+sam": ("sam", 1.0), "hdb+sam+maf": ("maf", 0.6)}


@dataclass
class RunConfig:
    alpha: float = 0.6
    seed: int = 1
    epochs: int = 30
    attention: str = "maf"
    variant: str = "mmnet-tiny"
    n: int = 200
    dims: tuple[int, int, int] = (8, 32, 32)
    pairing: str = "ratio"
    data_seed: int | None = None  # defaults to ``seed``
    train: TrainConfig = field(default_factory=TrainConfig)

    def spec(self) -> ArchSpec:
        base = get_variant(self.variant)
        return dataclasses.replace(base, input_dims=(base.input_dims[0],) + tuple(self.dims),
                                   attention=self.attention)


@dataclass
class RunResult:
    config: RunConfig
    model: DualStreamModel
    train_set: Dataset
    test_set: Dataset
    result: TrainResult
    predictions: Predictions  # of the final-epoch model on the test split
    seconds: float

    @property
    def final_accuracy(self) -> float:
        return float(np.mean(self.predictions.predicted == self.predictions.labels))

    @property
    def best_accuracy(self) -> float:
        return max(r["val_accuracy"] for r in self.result.log)

    def summary(self) -> dict:
        return {"alpha": self.config.alpha, "attention": self.config.attention, "seed": self.config.seed,
                "pairing": self.config.pairing, "dims": list(self.config.dims),
                "epochs": self.config.epochs, "final_accuracy": self.final_accuracy,
                "best_accuracy": self.best_accuracy, "best_epoch": self.result.best_epoch,
                "initial_loss": self.result.initial_loss, "final_loss": self.result.final_loss,
                "seconds": round(self.seconds, 1)}


def run(cfg: RunConfig, log_path=None, checkpoint_dir=None) -> RunResult:
    """Generate the seeded dataset, build a fresh model and train it."""
    data_seed = cfg.seed if cfg.data_seed is None else cfg.data_seed
    train_set, test_set = generate_dataset(data_seed, cfg.n, spec=DatasetSpec(dims=tuple(cfg.dims), pairing=cfg.pairing))
    model = build_model(cfg.spec(), seed=cfg.seed, maf=MAFConfig(cfg.alpha))
    tcfg = dataclasses.replace(cfg.train, epochs=cfg.epochs, seed=cfg.seed)
    t0 = time.perf_counter()
    result = train(model, train_set, test_set, tcfg, log_path=log_path, checkpoint_dir=checkpoint_dir)
    seconds = time.perf_counter() - t0
    preds = predict(model, test_set)
    return RunResult(cfg, model, train_set, test_set, result, preds, seconds)


def best_model(res: RunResult) -> DualStreamModel:
    """Put the best-validation weights back into the run's model."""
    restore(res.model, res.result.best_state)
    return res.model


def sweep(configs: list[RunConfig], out_dir=None) -> list[dict]:
    rows = []
    for cfg in configs:
        log_path = None
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            log_path = Path(out_dir) / f"{cfg.attention}_a{cfg.alpha}_s{cfg.seed}.jsonl"
        res = run(cfg, log_path=log_path)
        rows.append(res.summary() | {"predicted": res.predictions.predicted.tolist()})
        if out_dir is not None:
            with open(Path(out_dir) / "summary.jsonl", "a") as fh:
                fh.write(json.dumps(rows[-1]) + "\n")
    return rows


def mean_accuracy(rows: list[dict], key: str = "final_accuracy") -> float:
    return float(np.mean([r[key] for r in rows]))
