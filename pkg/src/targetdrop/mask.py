"""TargetDrop mask construction and application for channel-last feature maps."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention import AttentionParams, attention_map
from .tensor import ShapeError, argmax_spatial, as_feature

log = logging.getLogger(__name__)

TRAIN = "train"
INFERENCE = "inference"

# degenerate events seen by apply_and_normalize, e.g. diagnostics["empty_channel"]
diagnostics: Counter = Counter()


@dataclass(frozen=True)
class DropConfig:
    gamma: float = 0.15
    k: int = 5
    phase: str = TRAIN
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if int(self.k) != self.k or self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"block size k must be a positive odd integer, got {self.k}")
        if self.phase not in (TRAIN, INFERENCE):
            raise ValueError(f"phase must be 'train' or 'inference', got {self.phase!r}")


@dataclass
class DropMask:
    """Binary (H, W, C) keep-mask plus the bookkeeping that produced it.

    ``scale`` holds the per-channel multiplier applied to kept units. For
    TargetDrop it is numel/kept_count (0 for a fully dropped channel).
    """

    s: np.ndarray
    t: np.ndarray
    scale: np.ndarray
    centers: dict[int, tuple[int, int]] = field(default_factory=dict)
    bounds: dict[int, tuple[int, int, int, int]] = field(default_factory=dict)

    @property
    def kept_counts(self) -> np.ndarray:
        return self.s.sum(axis=(0, 1)).astype(np.int64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.s.shape

    @classmethod
    def identity(cls, shape) -> "DropMask":
        c = shape[-1]
        return cls(np.ones(shape), np.zeros(c, dtype=np.int8), np.ones(c))


def per_channel_scale(s: np.ndarray) -> np.ndarray:
    h, w = s.shape[:2]
    kept = s.sum(axis=(0, 1))
    scale = np.zeros(s.shape[2])
    nz = kept > 0
    scale[nz] = (h * w) / kept[nz]
    return scale


def select_target_channels(m, gamma: float) -> tuple[np.ndarray, int]:
    """Tag the floor(gamma * C) channels with the largest scores.

    Ties at the threshold go to the lower channel index, so exactly K tags
    are set.
    """
    m = np.asarray(m, dtype=np.float64)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    c = m.shape[0]
    k_count = int(np.floor(gamma * c))
    t = np.zeros(c, dtype=np.int8)
    order = np.argsort(-m, kind="stable")
    t[order[:k_count]] = 1
    return t, k_count


def region_bounds(a: int, b: int, k: int, h_extent: int, w_extent: int) -> tuple[int, int, int, int]:
    """Inclusive bounds of the k x k block centred on (a, b), clipped to the map."""
    if not (0 <= a < h_extent and 0 <= b < w_extent):
        raise ValueError(f"center ({a}, {b}) outside {h_extent}x{w_extent} map")
    if k < 1 or k % 2 == 0:
        raise ValueError(f"block size must be odd, got {k}")
    half = k // 2
    h1, h2 = max(a - half, 0), min(a + half, h_extent - 1)
    w1, w2 = max(b - half, 0), min(b + half, w_extent - 1)
    return h1, h2, w1, w2


def build_mask(u, m, cfg: DropConfig) -> DropMask:
    u = as_feature(u, rank=(3,))
    m = np.asarray(m, dtype=np.float64)
    h, w, c = u.shape
    if m.shape != (c,):
        raise ShapeError(f"attention map has shape {m.shape}, expected ({c},)")
    t, _ = select_target_channels(m, cfg.gamma)
    s = np.ones((h, w, c))
    centers, bounds = {}, {}
    for q in np.flatnonzero(t):
        q = int(q)
        a, b = argmax_spatial(u[:, :, q])
        h1, h2, w1, w2 = region_bounds(a, b, cfg.k, h, w)
        s[h1 : h2 + 1, w1 : w2 + 1, q] = 0.0
        centers[q] = (a, b)
        bounds[q] = (h1, h2, w1, w2)
    return DropMask(s, t, per_channel_scale(s), centers, bounds)


def apply_and_normalize(u, mask: DropMask) -> np.ndarray:
    """Zero the masked units and rescale each channel by its ``mask.scale`` entry.

    Untouched channels have scale exactly 1, so they pass through bit-identical.
    A channel with nothing kept comes out as zeros.
    """
    u = as_feature(u, rank=(3,))
    if u.shape != mask.s.shape:
        raise ShapeError(f"input {u.shape} does not match mask {mask.s.shape}")
    empty = int(((mask.kept_counts == 0)).sum())
    if empty:
        diagnostics["empty_channel"] += empty
        log.debug("%d channel(s) fully dropped; emitting zeros", empty)
    return _masked(u, mask.s, mask.scale)


def _masked(u: np.ndarray, s: np.ndarray, scale: np.ndarray) -> np.ndarray:
    out = u * s * scale
    empty = scale == 0
    if empty.any():
        # exactly +0, not u * 0 (which is -0 for negative u)
        out[np.broadcast_to(empty, out.shape)] = 0.0
    return out


def _mask_arrays(masks: DropMask | Sequence[DropMask]) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(masks, DropMask):
        return masks.s, masks.scale
    s = np.stack([mk.s for mk in masks])
    scale = np.stack([mk.scale for mk in masks])[:, None, None, :]
    return s, scale


def targetdrop_forward(u, p: AttentionParams, cfg: DropConfig, return_mask: bool = False):
    """Attention-guided block drop on a (H, W, C) map or a (N, H, W, C) batch.

    In the inference phase the input is returned untouched. In the training
    phase each sample gets its own attention map, target channels and mask.
    With ``return_mask`` the mask (or list of per-sample masks) is returned too.
    """
    u = as_feature(u)
    if cfg.phase == INFERENCE:
        return (u, None) if return_mask else u
    if u.ndim == 3:
        mask = build_mask(u, attention_map(u, p), cfg)
        out = apply_and_normalize(u, mask)
    else:
        mask = [build_mask(x, attention_map(x, p), cfg) for x in u]
        out = np.stack([apply_and_normalize(x, mk) for x, mk in zip(u, mask)])
    return (out, mask) if return_mask else out


def targetdrop_backward(grad_out, masks: DropMask | Sequence[DropMask]) -> np.ndarray:
    """Pull-back with the mask held constant; no gradient reaches the gate."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    s, scale = _mask_arrays(masks)
    if grad_out.shape != s.shape:
        raise ShapeError(f"upstream gradient {grad_out.shape} does not match mask {s.shape}")
    return grad_out * s * scale


def apply_masks(u, masks: DropMask | Sequence[DropMask]) -> np.ndarray:
    """Forward with precomputed (frozen) masks; same arithmetic as apply_and_normalize."""
    u = as_feature(u)
    s, scale = _mask_arrays(masks)
    if u.shape != s.shape:
        raise ShapeError(f"input {u.shape} does not match mask {s.shape}")
    return _masked(u, s, scale)
