"""SGD with momentum, augmentation, metrics and the train/evaluate loops."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import ops
from .model import DualStreamModel, save_checkpoint
from .synth import Dataset
from .tensor import Tape, Tensor, get_default_dtype, no_tape

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------- optimizer

@dataclass
class SGDState:
    lr: float = 1e-3
    momentum: float = 0.9
    velocity: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: SGDState) -> None:
    """Classic momentum: v <- mu*v + g; theta <- theta - lr*v (in place)."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        v = state.velocity.get(id(p))
        if v is None:
            v = state.velocity[id(p)] = np.zeros_like(p.data)
        v *= p.dtype.type(state.momentum)
        v += g
        p.data -= p.dtype.type(state.lr) * v


# ------------------------------------------------------------- augmentation

@dataclass(frozen=True)
class AugmentConfig:
    flip_probability: float = 0.5
    noise_mean: float = 0.0
    noise_variance: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip probability must lie in [0, 1]")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be non-negative")


def augment(vol_a: np.ndarray, vol_b: np.ndarray, cfg: AugmentConfig,
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Joint width flip of both modalities, then independent Gaussian noise per voxel."""
    if rng.random() < cfg.flip_probability:
        vol_a, vol_b = vol_a[..., ::-1], vol_b[..., ::-1]
    if cfg.noise_variance > 0 or cfg.noise_mean != 0:
        std = math.sqrt(cfg.noise_variance)
        vol_a = vol_a + rng.normal(cfg.noise_mean, std, size=vol_a.shape).astype(vol_a.dtype)
        vol_b = vol_b + rng.normal(cfg.noise_mean, std, size=vol_b.shape).astype(vol_b.dtype)
    return np.ascontiguousarray(vol_a), np.ascontiguousarray(vol_b)


# ------------------------------------------------------------------ metrics

def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: (concordant + ties/2) / (positives * negatives)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary (0/1)")
    pos = scores[labels == 1]
    neg = np.sort(scores[labels == 0])
    if pos.size == 0 or neg.size == 0:
        raise ValueError("roc_auc needs at least one positive and one negative")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    twice = int(2 * below.sum() + (upto - below).sum())  # 2*concordant + ties
    return twice / (2 * pos.size * neg.size)


@dataclass
class MetricsReport:
    accuracy: float
    precision: list[float]
    confusion: list[list[int]]
    sensitivity: float | None = None
    specificity: float | None = None
    roc_auc: float | None = None
    zero_division: list[int] = field(default_factory=list)  # classes whose precision was 0/0

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def compute_metrics(y_true, y_pred, num_classes: int, scores=None) -> MetricsReport:
    """Metrics from labels and predictions; ``scores`` (N, K) enables ROC-AUC on binary tasks."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.size == 0:
        raise ValueError("cannot evaluate an empty dataset")
    cm = confusion_matrix(y_true, y_pred, num_classes)
    accuracy = float(np.trace(cm) / cm.sum())
    col = cm.sum(axis=0)
    precision, zero = [], []
    for c in range(num_classes):
        if col[c] == 0:
            precision.append(0.0)
            zero.append(c)
        else:
            precision.append(float(cm[c, c] / col[c]))
    report = MetricsReport(accuracy, precision, cm.tolist(), zero_division=zero)
    if num_classes == 2:
        tp, fn, fp, tn = cm[1, 1], cm[1, 0], cm[0, 1], cm[0, 0]
        report.sensitivity = float(tp / (tp + fn)) if tp + fn else 0.0
        report.specificity = float(tn / (tn + fp)) if tn + fp else 0.0
        if scores is not None and 0 < (y_true == 1).sum() < y_true.size:
            report.roc_auc = roc_auc(np.asarray(scores)[:, 1], y_true)
    return report


@dataclass
class Predictions:
    labels: np.ndarray
    predicted: np.ndarray
    probabilities: np.ndarray
    loss: float


def predict(model: DualStreamModel, data: Dataset, batch_size: int = 8) -> Predictions:
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    was_training = model.training
    model.eval()
    probs, losses = [], []
    try:
        with no_tape():
            for lo in range(0, len(data), batch_size):
                xa, xb, y = data.arrays(range(lo, min(lo + batch_size, len(data))))
                logits = model(xa, xb)
                losses.append(float(ops.softmax_cross_entropy(logits, y).data) * len(y))
                probs.append(ops.softmax(logits.data.astype(np.float64)))
    finally:
        model.train(was_training)
    p = np.concatenate(probs)
    return Predictions(data.labels, p.argmax(axis=1), p, sum(losses) / len(data))


def evaluate(model: DualStreamModel, data: Dataset, batch_size: int = 8) -> MetricsReport:
    pred = predict(model, data, batch_size)
    return compute_metrics(pred.labels, pred.predicted, model.spec.num_classes, pred.probabilities)


# ----------------------------------------------------------------- training

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    lr: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        aug = AugmentConfig(**d.pop("augment", {}))
        return cls(augment=aug, **d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    log: list[dict]
    best_epoch: int
    best_state: dict[str, np.ndarray]
    initial_loss: float
    final_loss: float


def _snapshot(model) -> dict[str, np.ndarray]:
    state = {name: p.data.copy() for name, p in model.named_parameters()}
    state.update({f"buffer:{name}": b.copy() for name, b in model.named_buffers()})
    return state


def restore(model, state: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        p.data[...] = state[name]
    for name, b in model.named_buffers():
        b[...] = state[f"buffer:{name}"]


def train(model: DualStreamModel, train_set: Dataset, val_set: Dataset, config: TrainConfig,
          log_path=None, checkpoint_dir=None) -> TrainResult:
    """Epoch loop of augment -> forward -> loss -> backward -> SGD step.

    Each epoch appends one record (train loss, validation metrics) to the
    returned log and, if ``log_path`` is given, to a JSON-lines file.  The
    parameters of the best validation epoch are kept in ``best_state`` and
    written to ``checkpoint_dir`` when given.
    """
    params = model.parameters()
    state = SGDState(config.lr, config.momentum)
    order_rng = np.random.default_rng([config.seed, 1])
    aug_rng = np.random.default_rng([config.augment.seed, config.seed, 2])
    dtype = get_default_dtype()
    records: list[dict] = []
    best = (-1.0, math.inf)
    best_epoch, best_state = 0, _snapshot(model)
    sink = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            model.train()
            order = order_rng.permutation(len(train_set))
            total, seen = 0.0, 0
            for step, lo in enumerate(range(0, len(order), config.batch_size)):
                idx = order[lo:lo + config.batch_size]
                pairs = [augment(train_set[i].volume_a, train_set[i].volume_b, config.augment, aug_rng)
                         for i in idx]
                xa = np.stack([p[0] for p in pairs]).astype(dtype)
                xb = np.stack([p[1] for p in pairs]).astype(dtype)
                y = train_set.labels[idx]
                with Tape() as tape:
                    loss = ops.softmax_cross_entropy(model(xa, xb), y)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise DivergenceError(f"non-finite loss {value} at epoch {epoch}, step {step}")
                grads = tape.backward(loss, params)
                sgd_step(params, grads, state)
                total += value * len(idx)
                seen += len(idx)
            pred = predict(model, val_set)
            metrics = compute_metrics(pred.labels, pred.predicted, model.spec.num_classes, pred.probabilities)
            rec = {"epoch": epoch, "train_loss": total / seen, "val_loss": pred.loss,
                   "val_accuracy": metrics.accuracy, "val_precision": metrics.precision,
                   "val_sensitivity": metrics.sensitivity, "val_specificity": metrics.specificity,
                   "val_roc_auc": metrics.roc_auc, "seconds": round(time.perf_counter() - t0, 3)}
            records.append(rec)
            log.info("epoch %d loss %.4f val_acc %.3f", epoch, rec["train_loss"], metrics.accuracy)
            if sink:
                sink.write(json.dumps(rec) + "\n")
                sink.flush()
            key = (metrics.accuracy, -pred.loss)
            if key > (best[0], -best[1]):
                best = (metrics.accuracy, pred.loss)
                best_epoch, best_state = epoch, _snapshot(model)
    finally:
        if sink:
            sink.close()
    if checkpoint_dir is not None:
        current = _snapshot(model)
        restore(model, best_state)
        save_checkpoint(model, checkpoint_dir, {"best_epoch": best_epoch, "train": config.to_dict()})
        restore(model, current)
    return TrainResult(records, best_epoch, best_state,
                       records[0]["train_loss"] if records else math.nan,
                       records[-1]["train_loss"] if records else math.nan)
