"""Datasets, normalization and the pad-crop-flip augmentation."""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .config import parse_kv


class IdxError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, H, W, C); uint8 when raw, float64 once normalized
    labels: np.ndarray  # (N,) int64
    split: str = "train"
    normalized: bool = False

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, H, W, C), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


# --- IDX ------------------------------------------------------------------

_IDX_UBYTE = 0x08


def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxError("truncated magic", len(raw))
    if raw[0] != 0 or raw[1] != 0 or raw[2] != _IDX_UBYTE:
        raise IdxError(f"bad magic {raw[:4].hex()}", 0)
    ndim = raw[3]
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxError("truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims)) if dims else 1
    if len(raw) < head + count:
        raise IdxError(f"truncated payload: need {count} bytes", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def write_idx(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(bytes([0, 0, _IDX_UBYTE, arr.ndim]))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def load_idx(images_path, labels_path, split: str = "train") -> ImageDataset:
    images = read_idx(images_path)
    if images.ndim == 3:
        images = images[..., None]
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise IdxError(f"labels must be 1-D, got {labels.shape}", 3)
    return ImageDataset(images.copy(), labels.astype(np.int64), split)


def load_cifar_batch(path, split: str = "train") -> ImageDataset:
    """CIFAR-10 binary batch: per record one label byte then 3x32x32 CHW pixels."""
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    rec = 1 + 3 * 32 * 32
    if raw.size % rec:
        raise ValueError(f"{path}: size {raw.size} is not a multiple of {rec}")
    raw = raw.reshape(-1, rec)
    images = raw[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).copy()
    return ImageDataset(images, raw[:, 0].astype(np.int64), split)


# --- normalization --------------------------------------------------------


def channel_stats(ds: ImageDataset) -> tuple[np.ndarray, np.ndarray]:
    x = ds.images.astype(np.float64)
    mean = x.mean(axis=(0, 1, 2))
    std = x.std(axis=(0, 1, 2))
    if np.any(std == 0):
        raise ValueError(f"degenerate channel: zero std in channel(s) {np.flatnonzero(std == 0).tolist()}")
    return mean, std


def normalize_images(images: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (images.astype(np.float64) - mean) / std


def normalize(ds: ImageDataset, stats=None, force: bool = False):
    """Per-channel standardization. ``stats`` default to this split's own mean/std.

    Normalizing an already-normalized dataset is not idempotent, so it
    raises unless ``force`` is set. Returns ``(dataset, (mean, std))``.
    """
    if ds.normalized and not force:
        raise ValueError("dataset is already normalized; pass force=True to normalize again")
    mean, std = stats if stats is not None else channel_stats(ds)
    out = ImageDataset(normalize_images(ds.images, mean, std), ds.labels, ds.split, normalized=True)
    return out, (mean, std)


# --- augmentation ---------------------------------------------------------


def augment_params(seed, pad: int = 4) -> tuple[tuple[int, int], bool]:
    """Crop offset (uniform over the (2 pad + 1)^2 positions) and flip coin for one seed."""
    rng = np.random.default_rng(seed)
    offset = (int(rng.integers(0, 2 * pad + 1)), int(rng.integers(0, 2 * pad + 1)))
    return offset, bool(rng.random() < 0.5)


def augment(image: np.ndarray, seed=None, pad: int = 4, offset=None, flip=None) -> np.ndarray:
    """Zero-pad ``pad`` pixels per side, crop back to native size, maybe flip left-right.

    ``offset`` (row, col) into the padded image and ``flip`` override the
    random draws; offset (pad, pad) without flip is the identity.
    """
    drawn_offset, drawn_flip = augment_params(seed, pad)
    offset = drawn_offset if offset is None else offset
    flip = drawn_flip if flip is None else flip
    h, w = image.shape[:2]
    padded = np.zeros((h + 2 * pad, w + 2 * pad) + image.shape[2:], dtype=image.dtype)
    padded[pad : pad + h, pad : pad + w] = image
    i, j = offset
    out = padded[i : i + h, j : j + w]
    if flip:
        out = out[:, ::-1]
    return out.copy()


def augment_batch(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    seeds = rng.integers(0, 2**63 - 1, size=len(images))
    return np.stack([augment(img, int(s), pad) for img, s in zip(images, seeds)])


# --- procedural toy data --------------------------------------------------


@dataclass(frozen=True)
class ToyConfig:
    classes: int = 10
    n_per_class: int = 200
    size: int = 16
    channels: int = 3
    noise: float = 24.0
    seed: int = 0

    @classmethod
    def from_text(cls, text: str) -> "ToyConfig":
        known = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, val in parse_kv(text).items():
            if key not in known:
                raise ValueError(f"unknown toy-dataset key {key!r}")
            values[key] = float(val) if key == "noise" else int(val)
        return cls(**values)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


def make_toy_dataset(classes: int = 10, n_per_class: int = 200, seed: int = 0, size: int = 16,
                     channels: int = 3, noise: float = 24.0, split: str = "train") -> ImageDataset:
    """Striped images: class c has stripes along axis c % 2 at c // 2 + 1 cycles per image.

    Phase, contrast and per-channel tint are random per sample, plus Gaussian
    pixel noise. Both stripe directions survive a horizontal flip, so the
    labels stay valid under augmentation.
    """
    rng = np.random.default_rng(seed)
    n = classes * n_per_class
    labels = np.repeat(np.arange(classes), n_per_class)
    coords = np.arange(size) / size
    images = np.empty((n, size, size, channels))
    for i, c in enumerate(labels):
        cycles = c // 2 + 1
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * cycles * coords + phase)
        pattern = np.tile(wave[:, None], (1, size)) if c % 2 == 0 else np.tile(wave[None, :], (size, 1))
        contrast = rng.uniform(60, 100)
        tint = rng.uniform(0.5, 1.0, channels)
        images[i] = 128 + contrast * pattern[..., None] * tint + rng.normal(0, noise, (size, size, channels))
    order = rng.permutation(n)
    images = np.clip(np.rint(images), 0, 255).astype(np.uint8)[order]
    return ImageDataset(images, labels[order].astype(np.int64), split)


def make_toy_splits(cfg: ToyConfig, test_per_class: int | None = None):
    train = make_toy_dataset(cfg.classes, cfg.n_per_class, cfg.seed, cfg.size, cfg.channels, cfg.noise, "train")
    n_test = test_per_class if test_per_class is not None else max(cfg.n_per_class // 4, 1)
    test = make_toy_dataset(cfg.classes, n_test, cfg.seed + 1_000_003, cfg.size, cfg.channels, cfg.noise, "test")
    return train, test
