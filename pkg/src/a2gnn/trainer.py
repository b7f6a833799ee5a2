"""SGD with momentum, evaluation metrics and the training loop."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .config import TrainConfig
from .dataio import Dataset, DatasetManifest, SkeletonSequence, augment, prepare
from .model import A2GNN

__all__ = ["TrainConfig", "Metrics", "TrainingDiverged", "TrainResult", "sgd_momentum_step",
           "confusion_matrix", "metrics_from_confusion", "evaluate", "train", "build_model"]

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.npz"
LOG_NAME = "train_log.jsonl"


class TrainingDiverged(RuntimeError):
    pass


def sgd_momentum_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                      velocity: dict[str, np.ndarray], lr: float, momentum: float):
    """Heavy-ball update, in place: ``v <- momentum * v + g``; ``p <- p - lr * v``."""
    for name, p in params.items():
        g = grads[name]
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        if g.shape != p.shape or v.shape != p.shape:
            raise dc.ShapeError(f"{name}: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= momentum
        v += g
        p -= lr * v
    return params, velocity


@dataclass
class Metrics:
    confusion: np.ndarray   # rows: true class, columns: predicted class

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.total)

    @property
    def precision(self) -> np.ndarray:
        """Per predicted class; 0 where a class is never predicted."""
        col = self.confusion.sum(axis=0)
        diag = np.diag(self.confusion).astype(float)
        return np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)

    @property
    def recall(self) -> np.ndarray:
        """Per true class; 0 where a class has no samples."""
        row = self.confusion.sum(axis=1)
        diag = np.diag(self.confusion).astype(float)
        return np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)

    def to_dict(self, class_names: Sequence[str] | None = None) -> dict:
        names = list(class_names) if class_names else [str(i) for i in range(len(self.confusion))]
        return {
            "accuracy": self.accuracy,
            "total": self.total,
            "precision": dict(zip(names, self.precision.tolist())),
            "recall": dict(zip(names, self.recall.tolist())),
            "confusion": self.confusion.tolist(),
        }


def confusion_matrix(true, pred, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=int), np.asarray(pred, dtype=int)), 1)
    return cm


def metrics_from_confusion(cm) -> Metrics:
    return Metrics(np.asarray(cm, dtype=np.int64))


def _eval_view(seq: SkeletonSequence, manifest: DatasetManifest | None, segments: int) -> np.ndarray:
    return augment(prepare(seq, manifest), segments, rng=None).frames


def evaluate(model: A2GNN, sequences: Sequence[SkeletonSequence], manifest: DatasetManifest | None = None,
             segments: int | None = None) -> Metrics:
    """Classify every sequence from its deterministic segment-centre view."""
    if not sequences:
        raise ValueError("cannot evaluate an empty split")
    segments = model.config.segments if segments is None else segments
    true, pred = [], []
    for seq in sequences:
        true.append(seq.label)
        pred.append(model.predict(_eval_view(seq, manifest, segments)))
    return Metrics(confusion_matrix(true, pred, model.num_classes))


@dataclass
class TrainResult:
    model: A2GNN
    history: list[dict] = field(default_factory=list)
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0

    @property
    def final_loss(self) -> float:
        return self.history[-1]["train_loss"] if self.history else float("nan")


def build_model(config: TrainConfig, dataset: Dataset) -> A2GNN:
    """Model sized from the dataset manifest (joint count, edges, class count)."""
    m = dataset.manifest
    num_nodes = len(m.joints) if m.joints else dataset.sequences[0].num_joints
    return A2GNN(config, num_nodes, m.edges, m.num_classes)


def _first_nonfinite(store: dc.ParamStore) -> str | None:
    for name, p in store.items():
        if not np.all(np.isfinite(p.value)):
            return f"{name} (value)"
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            return f"{name} (gradient)"
    return None


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    # leaf grads may alias each other, so never scale in place
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm:
        return grads
    return {k: g * (max_norm / norm) for k, g in grads.items()}


def _save(model: A2GNN, out_dir: Path, epoch: int, velocity, manifest: DatasetManifest):
    extras = {f"velocity/{k}": v for k, v in velocity.items()}
    meta = {"epoch": epoch, "classes": manifest.classes, "joints": manifest.joints}
    tmp = out_dir / (CHECKPOINT_NAME + ".tmp")
    model.save(tmp, meta, extras)
    tmp.replace(out_dir / CHECKPOINT_NAME)


def resume(path) -> tuple[A2GNN, int, dict[str, np.ndarray]]:
    """Model, completed-epoch counter and optimizer velocity from a checkpoint."""
    model, meta, extras = A2GNN.load(path)
    velocity = {k[len("velocity/"):]: v.astype(model.dtype) for k, v in extras.items()
                if k.startswith("velocity/")}
    return model, int(meta.get("epoch", 0)), velocity


def train(model: A2GNN, dataset: Dataset, config: TrainConfig | None = None, out_dir=None,
          start_epoch: int = 0, velocity: dict[str, np.ndarray] | None = None,
          on_epoch: Callable[[dict], None] | None = None, evaluate_test: bool = True) -> TrainResult:
    """Train until ``config.epochs`` epochs have completed in total.

    Deterministic given ``config.seed``: the augmentation stream of epoch
    ``e`` is seeded by ``(seed, e)``, so resumed runs replay the same samples.
    """
    config = model.config if config is None else config
    manifest = dataset.manifest
    train_set = [prepare(s, manifest) for s in dataset.split("train")]
    if not train_set:
        raise ValueError("training split is empty")
    test_set = dataset.split("test") if evaluate_test and "test" in manifest.splits else []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if start_epoch == 0:
            (out / LOG_NAME).write_text("", encoding="utf-8")

    store = model.store
    velocity = {} if velocity is None else velocity
    result = TrainResult(model, velocity=velocity, epoch=start_epoch)
    for epoch in range(start_epoch, config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(train_set))
        lr = config.lr / (1.0 + config.lr_decay * epoch)
        losses, correct = [], 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            store.zero_grad()
            for idx in batch:
                seq = train_set[idx]
                view = augment(seq, config.segments, config.scale_lo, config.scale_hi, rng)
                res = model.forward(view.frames)
                logp = dc.log_softmax_rows(res.logits)
                loss = dc.scale(dc.pick(logp, 0, seq.label), -1.0 / len(batch))
                value = float(loss.value.item()) * len(batch)
                if not np.isfinite(value):
                    bad = _first_nonfinite(store) or "none (loss overflow)"
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}; first non-finite parameter: {bad}")
                dc.backward(loss)
                losses.append(value)
                correct += int(np.argmax(res.logits.value) == seq.label)
            grads = store.grads()
            if config.grad_clip > 0:
                grads = _clip(grads, config.grad_clip)
            params = {k: p.value for k, p in store.items()}
            sgd_momentum_step(params, grads, velocity, lr, config.momentum)
        store.zero_grad()
        bad = _first_nonfinite(store)
        if bad is not None:
            raise TrainingDiverged(f"non-finite parameter after epoch {epoch + 1}: {bad}")
        row = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)),
               "train_acc": correct / len(train_set)}
        row["test_acc"] = evaluate(model, test_set, manifest, config.segments).accuracy if test_set else None
        result.history.append(row)
        result.epoch = epoch + 1
        log.info("epoch %d loss %.5f train_acc %.3f test_acc %s", row["epoch"], row["train_loss"],
                 row["train_acc"], row["test_acc"])
        if out is not None:
            with open(out / LOG_NAME, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row) + "\n")
            if (epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs:
                _save(model, out, epoch + 1, velocity, manifest)
        if on_epoch is not None:
            on_epoch(row)
    if out is not None and start_epoch >= config.epochs:
        _save(model, out, start_epoch, velocity, manifest)
    return result
