"""Training loop (SGD with Nesterov momentum, step-decay schedule), evaluation and CAM."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .data import ImageDataset, augment_batch, channel_stats, normalize_images
from .mask import INFERENCE, TRAIN
from .model import TinyCNN

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    nesterov: bool = True
    lr_decay: float = 0.2
    milestones: tuple = (0.4, 0.6, 0.8)
    weight_decay: float = 0.0
    augment: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        ms = list(self.milestones)
        if any(not 0 < m < 1 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing in (0, 1), got {ms}")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for 0-based ``epoch``: decayed once per milestone fraction already reached.

    Products are formed in decimal so 0.1 * 0.2 gives 0.02, not 0.020000000000000004.
    """
    n = sum(epoch >= m * cfg.epochs for m in cfg.milestones)
    return float(Decimal(repr(cfg.lr)) * Decimal(repr(cfg.lr_decay)) ** n)


class NesterovSGD:
    """``buf = mu * buf + g``; step along ``g + mu * buf`` (or ``buf`` without Nesterov)."""

    def __init__(self, params: dict[str, np.ndarray], momentum: float = 0.9,
                 nesterov: bool = True, weight_decay: float = 0.0):
        self.params = params
        self.momentum, self.nesterov, self.weight_decay = momentum, nesterov, weight_decay
        self.bufs: dict[str, np.ndarray] = {}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, p in self.params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            if self.momentum:
                buf = self.bufs.get(name)
                buf = g.copy() if buf is None else self.momentum * buf + g
                self.bufs[name] = buf
                g = g + self.momentum * buf if self.nesterov else buf
            p -= lr * g


def evaluate(model: TinyCNN, x: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy in the inference phase (all drop layers pass through)."""
    if len(labels) == 0:
        return 0.0
    return float((model.predict(x) == labels).mean())


def train(model: TinyCNN, train_ds: ImageDataset, cfg: TrainConfig, test_ds: ImageDataset | None = None,
          on_epoch=None) -> list[dict]:
    """Train on raw (un-normalized) images. Returns one log row per epoch.

    Augmentation acts on raw pixels and normalization (train-split
    channel statistics) follows it.
    """
    if len(train_ds) == 0:
        raise ValueError("empty training set")
    stats = channel_stats(train_ds)
    model.norm_stats = stats
    x_train_plain = normalize_images(train_ds.images, *stats)
    x_test = normalize_images(test_ds.images, *stats) if test_ds is not None else None
    opt = NesterovSGD(model.named_params(), cfg.momentum, cfg.nesterov, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    logs = []
    n = len(train_ds)
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        model.set_progress(epoch / cfg.epochs)
        order = rng.permutation(n)
        if cfg.augment:
            x_epoch = normalize_images(augment_batch(train_ds.images, rng), *stats)
        else:
            x_epoch = x_train_plain
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            model.set_phase(TRAIN)
            loss = model.loss_and_grad(x_epoch[idx], train_ds.labels[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, batch starting {start}")
            opt.step(model.named_grads(), lr)
            total += loss * len(idx)
            seen += len(idx)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": total / seen,
            "train_acc": evaluate(model, x_train_plain, train_ds.labels),
            "test_acc": evaluate(model, x_test, test_ds.labels) if test_ds is not None else float("nan"),
        }
        log.info("epoch %d lr %g loss %.4f train %.3f test %.3f", epoch, lr, row["train_loss"],
                 row["train_acc"], row["test_acc"])
        logs.append(row)
        if on_epoch is not None:
            on_epoch(row)
    model.set_phase(INFERENCE)
    return logs


LOG_FIELDS = ("epoch", "lr", "train_loss", "train_acc", "test_acc")


def write_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in LOG_FIELDS})


def upsample_nearest(a: np.ndarray, h: int, w: int) -> np.ndarray:
    rows = (np.arange(h) * a.shape[0]) // h
    cols = (np.arange(w) * a.shape[1]) // w
    return a[rows][:, cols]


def compute_cam(model: TinyCNN, image: np.ndarray, class_index: int) -> np.ndarray:
    """Class activation map: head weights of ``class_index`` against the last conv features.

    ``image`` is one normalized (H, W, C) input. Returns an (H, W) map
    min-max scaled to [0, 1] (all zeros when the map is constant).
    """
    if not getattr(model, "has_gap_head", False):
        raise ValueError("CAM needs a model ending in global average pooling + dense")
    model.set_phase(INFERENCE)
    feats = model.features(image[None])[0]
    weights = model.head.w[:, class_index]
    cam = feats @ weights
    lo, hi = cam.min(), cam.max()
    cam = (cam - lo) / (hi - lo) if hi > lo else np.zeros_like(cam)
    return upsample_nearest(cam, image.shape[0], image.shape[1])
