"""Channel attention gate: GAP -> FC (C -> C/r) -> ReLU -> FC (C/r -> C) -> sigmoid."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ShapeError, as_feature, global_avg_pool, matvec, relu, sigmoid

MAGIC = b"TDATTN01"
_HEADER = struct.Struct("<8sIIQ")


@dataclass(frozen=True)
class AttentionParams:
    w1: np.ndarray  # (C // r, C)
    w2: np.ndarray  # (C, C // r)
    reduction_ratio: int
    seed: int = 0
    trainable: bool = False

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    @property
    def num_params(self) -> int:
        return self.w1.size + self.w2.size

    def __post_init__(self):
        c = self.w1.shape[1]
        hidden = c // self.reduction_ratio
        if self.w1.shape != (hidden, c) or self.w2.shape != (c, hidden):
            raise ShapeError(f"gate weights {self.w1.shape}, {self.w2.shape} do not match C={c}, r={self.reduction_ratio}")
        if not (np.isfinite(self.w1).all() and np.isfinite(self.w2).all()):
            raise ValueError("gate weights must be finite")


def check_reduction(c: int, r: int) -> None:
    if c < 1 or r < 1 or c % r != 0:
        raise ValueError(f"invalid reduction ratio: C={c} is not divisible by r={r}")


def init_attention(c: int, r: int, seed: int = 0, trainable: bool = False) -> AttentionParams:
    """Glorot-uniform gate weights, reproducible from ``seed``."""
    check_reduction(c, r)
    hidden = c // r
    rng = np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (c + hidden))  # fan_in + fan_out is the same for both layers
    w1 = rng.uniform(-limit, limit, size=(hidden, c))
    w2 = rng.uniform(-limit, limit, size=(c, hidden))
    return AttentionParams(w1, w2, r, seed, trainable)


def attention_from_pooled(v: np.ndarray, p: AttentionParams) -> np.ndarray:
    return sigmoid(matvec(p.w2, relu(matvec(p.w1, v))))


def attention_map(u, p: AttentionParams) -> np.ndarray:
    """Per-channel importance M in (0, 1) for one (H, W, C) feature map."""
    u = as_feature(u, rank=(3,))
    if u.shape[2] != p.channels:
        raise ShapeError(f"channel mismatch: input has {u.shape[2]}, gate expects {p.channels}")
    return attention_from_pooled(global_avg_pool(u), p)


def save_params(p: AttentionParams, path) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, p.channels, p.reduction_ratio, p.seed))
        f.write(p.w1.astype("<f8").tobytes())
        f.write(p.w2.astype("<f8").tobytes())


def load_params(path) -> AttentionParams:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, c, r, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    check_reduction(c, r)
    hidden = c // r
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * hidden * c:
        raise ValueError(f"{path}: expected {2 * hidden * c} weights, found {body.size}")
    w1 = body[: hidden * c].reshape(hidden, c).astype(np.float64)
    w2 = body[hidden * c :].reshape(c, hidden).astype(np.float64)
    return AttentionParams(w1, w2, r, seed)
