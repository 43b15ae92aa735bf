"""Reference masks for the untargeted methods: Dropout, SpatialDropout, DropBlock, Cutout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .mask import DropMask, region_bounds

METHODS = ("dropout", "spatialdropout", "dropblock", "cutout")


@dataclass(frozen=True)
class BaselineConfig:
    method: str = "dropout"
    rate: float = 0.1  # dropout / spatialdropout keep-complement, dropblock seed rate
    block: int = 5  # dropblock block or cutout side
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown baseline method {self.method!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must lie in [0, 1], got {self.rate}")
        if self.block < 1:
            raise ValueError(f"block size must be >= 1, got {self.block}")


def _check_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"drop rate must lie in [0, 1), got {rate}")


def dropout_mask(shape, rate: float, seed: int) -> DropMask:
    """Independent Bernoulli(keep = 1 - rate) per unit, inverted scaling 1/(1 - rate)."""
    _check_rate(rate)
    h, w, c = shape
    rng = np.random.default_rng(seed)
    s = (rng.random((h, w, c)) >= rate).astype(np.float64)
    return DropMask(s, np.ones(c, dtype=np.int8), np.full(c, 1.0 / (1.0 - rate)))


def spatialdropout_mask(shape, rate: float, seed: int) -> DropMask:
    """Drops whole channels, each independently with probability ``rate``."""
    _check_rate(rate)
    h, w, c = shape
    rng = np.random.default_rng(seed)
    dropped = rng.random(c) < rate
    s = np.ones((h, w, c))
    s[:, :, dropped] = 0.0
    return DropMask(s, dropped.astype(np.int8), np.full(c, 1.0 / (1.0 - rate)))


def dropblock_seeds(shape, seed_rate: float, block: int, seed: int) -> np.ndarray:
    """Boolean (H, W, C) seed map; seeds only where the whole block fits."""
    h, w, c = shape
    rng = np.random.default_rng(seed)
    draws = rng.random((h, w, c)) < seed_rate
    half = block // 2
    valid = np.zeros((h, w, c), dtype=bool)
    valid[half : h - half, half : w - half, :] = True
    return draws & valid


def dropblock_mask(shape, seed_rate: float, block: int, seed: int) -> DropMask:
    """Each sampled seed point zeroes a ``block`` x ``block`` square around it.

    Kept units are rescaled by total units / total kept, as in DropBlock.
    """
    if not 0.0 <= seed_rate <= 1.0:
        raise ValueError(f"seed rate must lie in [0, 1], got {seed_rate}")
    if block < 1 or block % 2 == 0:
        raise ValueError(f"dropblock block size must be odd, got {block}")
    h, w, c = shape
    seeds = dropblock_seeds(shape, seed_rate, block, seed)
    s = np.ones((h, w, c))
    for a, b, q in zip(*np.nonzero(seeds)):
        h1, h2, w1, w2 = region_bounds(int(a), int(b), block, h, w)
        s[h1 : h2 + 1, w1 : w2 + 1, q] = 0.0
    kept = s.sum()
    scale = s.size / kept if kept else 0.0
    t = (s.min(axis=(0, 1)) == 0).astype(np.int8)
    return DropMask(s, t, np.full(c, scale))


def cutout_bounds(a: int, b: int, size: int, h: int, w: int) -> tuple[int, int, int, int]:
    """Half-open [h1, h2) x [w1, w2) hole of side ``size`` centred at (a, b), clipped."""
    return (
        max(a - size // 2, 0),
        min(a + size - size // 2, h),
        max(b - size // 2, 0),
        min(b + size - size // 2, w),
    )


def cutout_mask(image_shape, size: int, seed: int, center: tuple[int, int] | None = None) -> DropMask:
    """One square hole shared by all channels, centre drawn uniformly over the image."""
    if size < 1:
        raise ValueError(f"cutout size must be >= 1, got {size}")
    h, w, c = image_shape
    if center is None:
        rng = np.random.default_rng(seed)
        center = (int(rng.integers(h)), int(rng.integers(w)))
    a, b = center
    h1, h2, w1, w2 = cutout_bounds(a, b, size, h, w)
    s = np.ones((h, w, c))
    s[h1:h2, w1:w2, :] = 0.0
    return DropMask(
        s,
        np.ones(c, dtype=np.int8),
        np.ones(c),
        centers={q: (a, b) for q in range(c)},
        bounds={q: (h1, h2 - 1, w1, w2 - 1) for q in range(c)},
    )


def make_mask(cfg: BaselineConfig, shape) -> DropMask:
    if cfg.method == "dropout":
        return dropout_mask(shape, cfg.rate, cfg.seed)
    if cfg.method == "spatialdropout":
        return spatialdropout_mask(shape, cfg.rate, cfg.seed)
    if cfg.method == "dropblock":
        return dropblock_mask(shape, cfg.rate, cfg.block, cfg.seed)
    return cutout_mask(shape, cfg.block, cfg.seed)


@dataclass
class MaskStats:
    drop_fraction: float
    per_channel_fractions: np.ndarray
    contiguity: float
    mean_block_size: float


def _contiguity(dropped: np.ndarray) -> float:
    # mean over dropped cells of the share of in-map 4-neighbours that are also dropped
    h, w, _ = dropped.shape
    if not dropped.any():
        return 0.0
    same = np.zeros(dropped.shape)
    total = np.zeros(dropped.shape)
    for axis in (0, 1):
        n = dropped.shape[axis]
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis], hi[axis] = slice(0, n - 1), slice(1, n)
        lo, hi = tuple(lo), tuple(hi)
        pair = dropped[lo] & dropped[hi]
        same[lo] += pair
        same[hi] += pair
        total[lo] += 1
        total[hi] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(total > 0, same / np.maximum(total, 1), 0.0)
    return float(ratio[dropped].mean())


def _mean_block_size(dropped: np.ndarray) -> float:
    sizes = []
    for q in range(dropped.shape[2]):
        labels, n = ndimage.label(dropped[:, :, q])
        if n:
            sizes.extend(np.bincount(labels.ravel())[1:].tolist())
    return float(np.mean(sizes)) if sizes else 0.0


def mask_stats(mask: DropMask) -> MaskStats:
    dropped = mask.s == 0
    h, w, _ = dropped.shape
    return MaskStats(
        drop_fraction=float(dropped.sum() / dropped.size),
        per_channel_fractions=dropped.sum(axis=(0, 1)) / (h * w),
        contiguity=_contiguity(dropped),
        mean_block_size=_mean_block_size(dropped),
    )
