"""TargetDrop: attention-guided block dropout for convolutional feature maps."""

from .attention import AttentionParams, attention_map, init_attention
from .mask import (
    DropConfig,
    DropMask,
    apply_and_normalize,
    build_mask,
    region_bounds,
    select_target_channels,
    targetdrop_backward,
    targetdrop_forward,
)

__all__ = [
    "AttentionParams",
    "DropConfig",
    "DropMask",
    "apply_and_normalize",
    "attention_map",
    "build_mask",
    "init_attention",
    "region_bounds",
    "select_target_channels",
    "targetdrop_backward",
    "targetdrop_forward",
]
