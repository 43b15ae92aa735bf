"""TinyCNN: a small plain conv classifier with optional drop layers after its first groups."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import AttentionParams, attention_map, init_attention
from .baselines import dropblock_mask, dropout_mask, spatialdropout_mask
from .mask import INFERENCE, TRAIN, DropConfig, apply_masks, build_mask, targetdrop_backward

DROP_METHODS = ("none", "targetdrop", "dropout", "spatialdropout", "dropblock")


class Layer:
    training = False

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


class Conv(Layer):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, stride: int = 1, k: int = 3):
        self.stride, self.pad = stride, k // 2
        self.w = rng.normal(0.0, np.sqrt(2.0 / (k * k * cin)), size=(k, k, cin, cout))
        self.b = np.zeros(cout)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def forward(self, x):
        self.x = x
        return T.conv2d(x, self.w, self.b, self.stride, self.pad)

    def backward(self, g):
        gx, self.dw, self.db = T.conv2d_backward(g, self.x, self.w, self.stride, self.pad)
        return gx

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}


class ReLU(Layer):
    def forward(self, x):
        self.x = x
        return T.relu(x)

    def backward(self, g):
        return T.relu_backward(g, self.x)


class GlobalAvgPool(Layer):
    def forward(self, x):
        self.shape = x.shape
        return T.global_avg_pool(x)

    def backward(self, g):
        return T.global_avg_pool_backward(g, self.shape)


class Dense(Layer):
    def __init__(self, din: int, dout: int, rng: np.random.Generator):
        limit = np.sqrt(6.0 / (din + dout))
        self.w = rng.uniform(-limit, limit, size=(din, dout))
        self.b = np.zeros(dout)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def forward(self, x):
        self.x = x
        return T.dense(x, self.w, self.b)

    def backward(self, g):
        gx, self.dw, self.db = T.dense_backward(g, self.x, self.w)
        return gx

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}


class TargetDropLayer(Layer):
    """Attention-guided block drop; identity outside training.

    With ``frozen`` set, the masks from the previous training forward are
    reused instead of being rebuilt (used for gradient checks).
    """

    def __init__(self, channels: int, cfg: DropConfig, r: int, seed: int, schedule: str = "constant"):
        self.cfg = cfg
        self.gate: AttentionParams = init_attention(channels, r, seed)
        self.schedule = schedule
        self.progress = 1.0
        self.frozen = False
        self.masks = None

    @property
    def gamma(self) -> float:
        if self.schedule == "linear":
            return self.cfg.gamma * min(max(self.progress, 0.0), 1.0)
        return self.cfg.gamma

    def forward(self, x):
        if not self.training:
            return x
        if not (self.frozen and self.masks is not None):
            cfg = replace(self.cfg, gamma=self.gamma, phase=TRAIN)
            self.masks = [build_mask(u, attention_map(u, self.gate), cfg) for u in x]
        return apply_masks(x, self.masks)

    def backward(self, g):
        if not self.training:
            return g
        return targetdrop_backward(g, self.masks)

    def buffers(self):
        return {"w1": self.gate.w1, "w2": self.gate.w2}


class BaselineDropLayer(Layer):
    """Dropout / SpatialDropout / DropBlock applied per sample with a seeded stream."""

    def __init__(self, method: str, rate: float, block: int, seed: int):
        self.method, self.rate, self.block = method, rate, block
        self.rng = np.random.default_rng(seed)
        self.frozen = False
        self.masks = None

    def _mask(self, shape, seed):
        if self.method == "dropout":
            return dropout_mask(shape, self.rate, seed)
        if self.method == "spatialdropout":
            return spatialdropout_mask(shape, self.rate, seed)
        return dropblock_mask(shape, self.rate, self.block, seed)

    def forward(self, x):
        if not self.training:
            return x
        if not (self.frozen and self.masks is not None):
            seeds = self.rng.integers(0, 2**63 - 1, size=len(x))
            self.masks = [self._mask(u.shape, int(s)) for u, s in zip(x, seeds)]
        return apply_masks(x, self.masks)

    def backward(self, g):
        if not self.training:
            return g
        return targetdrop_backward(g, self.masks)


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    classes: int = 10
    widths: tuple = (16, 32, 64)
    drop: str = "none"
    insert_after: tuple = (1, 2)
    gamma: float = 0.15
    k: int = 5
    r: int = 16
    rate: float = 0.1  # baseline drop rate / dropblock seed rate
    gamma_schedule: str = "constant"
    seed: int = 0

    def __post_init__(self):
        if self.drop not in DROP_METHODS:
            raise ValueError(f"unknown drop method {self.drop!r}; choose from {DROP_METHODS}")
        if self.gamma_schedule not in ("constant", "linear"):
            raise ValueError(f"unknown gamma schedule {self.gamma_schedule!r}")
        if any(g not in (1, 2, 3) for g in self.insert_after):
            raise ValueError(f"insertion points must be group numbers 1-3, got {self.insert_after}")
        DropConfig(self.gamma, self.k)  # validates gamma and k
        if self.drop == "targetdrop":
            for g in self.insert_after:
                c = self.widths[g - 1]
                if c % self.r:
                    raise ValueError(f"invalid reduction ratio: group {g} width {c} not divisible by r={self.r}")


class TinyCNN:
    """stem conv -> group1 (2 conv) -> group2 (2 conv, stride-2 entry) -> group3 (same) -> GAP -> dense."""

    has_gap_head = True

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        self.cfg = cfg
        self.norm_stats = None  # (mean, std) of the training inputs, set by train()
        rng = np.random.default_rng(cfg.seed)
        w1, w2, w3 = cfg.widths
        self.layers: list[Layer] = [Conv(cfg.in_channels, w1, rng), ReLU()]
        cin = w1
        for g, width in enumerate(cfg.widths, 1):
            stride = 1 if g == 1 else 2
            self.layers += [Conv(cin, width, rng, stride), ReLU(), Conv(width, width, rng), ReLU()]
            cin = width
            if cfg.drop != "none" and g in cfg.insert_after:
                self.layers.append(self._drop_layer(width, g))
        self.feature_end = len(self.layers)
        self.gap = GlobalAvgPool()
        self.head = Dense(w3, cfg.classes, rng)
        self.layers += [self.gap, self.head]

    def _drop_layer(self, channels: int, group: int) -> Layer:
        cfg = self.cfg
        seed = cfg.seed * 1000 + group
        if cfg.drop == "targetdrop":
            return TargetDropLayer(channels, DropConfig(cfg.gamma, cfg.k), cfg.r, seed, cfg.gamma_schedule)
        return BaselineDropLayer(cfg.drop, cfg.rate, cfg.k, seed)

    @property
    def drop_layers(self) -> list[Layer]:
        return [l for l in self.layers if isinstance(l, (TargetDropLayer, BaselineDropLayer))]

    def set_phase(self, phase: str) -> None:
        for layer in self.layers:
            layer.training = phase == TRAIN

    def set_progress(self, frac: float) -> None:
        for layer in self.drop_layers:
            if isinstance(layer, TargetDropLayer):
                layer.progress = frac

    def freeze_masks(self, frozen: bool = True) -> None:
        for layer in self.drop_layers:
            layer.frozen = frozen

    def features(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers[: self.feature_end]:
            x = layer.forward(x)
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self.features(x)
        for layer in self.layers[self.feature_end :]:
            x = layer.forward(x)
        return x

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def loss_and_grad(self, x, labels) -> float:
        logits = self.forward(x)
        loss = T.softmax_cross_entropy(logits, labels)
        self.backward(T.softmax_cross_entropy_backward(logits, labels))
        return loss

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        self.set_phase(INFERENCE)
        out = [self.forward(x[i : i + batch_size]).argmax(axis=1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.params().items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.grads().items()}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.buffers().items()}

    def num_params(self) -> int:
        return sum(v.size for v in self.named_params().values())


def param_overhead(base_channels, r: int, base_params: int = 11_170_000) -> tuple[int, float]:
    """Gate parameters added by one drop layer per listed channel count: 2 C^2 / r each."""
    added = 0
    for c in base_channels:
        if c % r:
            raise ValueError(f"invalid reduction ratio: C={c} is not divisible by r={r}")
        added += 2 * c * c // r
    return added, added / base_params


# --- checkpoints ----------------------------------------------------------

CKPT_MAGIC = b"TDCKPT01"


def save_checkpoint(model: TinyCNN, path) -> None:
    """Magic, u32 header length, JSON manifest, then little-endian float64 arrays in manifest order."""
    arrays = {**{f"param:{k}": v for k, v in model.named_params().items()},
              **{f"buffer:{k}": v for k, v in model.named_buffers().items()}}
    if model.norm_stats is not None:
        arrays["norm:mean"], arrays["norm:std"] = model.norm_stats
    cfg = asdict(model.cfg)
    header = json.dumps(
        {"config": cfg, "arrays": [[k, list(v.shape)] for k, v in arrays.items()]},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> TinyCNN:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a TinyCNN checkpoint")
    (n,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + n])
    cfg = header["config"]
    cfg["widths"] = tuple(cfg["widths"])
    cfg["insert_after"] = tuple(cfg["insert_after"])
    model = TinyCNN(ModelConfig(**cfg))
    params, buffers = model.named_params(), model.named_buffers()
    offset = 12 + n
    norm = {}
    for name, shape in header["arrays"]:
        kind, key = name.split(":", 1)
        count = int(np.prod(shape))
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
        if kind == "norm":
            norm[key] = data.astype(np.float64)
        else:
            target = params[key] if kind == "param" else buffers[key]
            target[...] = data
    if norm:
        model.norm_stats = (norm["mean"], norm["std"])
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return model
