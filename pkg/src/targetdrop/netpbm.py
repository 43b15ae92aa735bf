"""Binary PGM/PPM read/write, mask dumps and a fixed heatmap colour ramp."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mask import DropMask


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got {img.shape}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.clip(img, 0, 255).astype(np.uint8).tobytes())


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM needs an (H, W, 3) array, got {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.clip(img, 0, 255).astype(np.uint8).tobytes())


def _tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    out, pos = [], 0
    while len(out) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated netpbm header")
        out.append(raw[start:pos])
    return out, pos + 1  # single whitespace byte before the raster


def read_netpbm(path) -> np.ndarray:
    """Reads P5 (-> (H, W)) or P6 (-> (H, W, 3)) with maxval 255."""
    raw = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(raw, 4)
    if magic not in (b"P5", b"P6") or int(maxval) != 255:
        raise ValueError(f"{path}: unsupported netpbm header {magic!r} maxval {maxval!r}")
    w, h = int(w), int(h)
    depth = 1 if magic == b"P5" else 3
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * depth, offset=pos)
    return data.reshape((h, w) if depth == 1 else (h, w, 3))


# piecewise-linear blue -> cyan -> green -> yellow -> red
_RAMP_STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
_RAMP_RGB = np.array(
    [[0, 0, 255], [0, 255, 255], [0, 255, 0], [255, 255, 0], [255, 0, 0]], dtype=np.float64
)


def colorize(heat: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to uint8 RGB using the fixed ramp."""
    heat = np.clip(np.asarray(heat, dtype=np.float64), 0.0, 1.0)
    rgb = np.stack([np.interp(heat, _RAMP_STOPS, _RAMP_RGB[:, i]) for i in range(3)], axis=-1)
    return np.rint(rgb).astype(np.uint8)


def dump_mask(mask: DropMask, out_dir, prefix: str = "") -> list[Path]:
    """One ``mask_c{q}.pgm`` per channel (0 dropped, 255 kept) and a ``masks.txt`` sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    kept = mask.kept_counts
    lines = ["channel a b h1 h2 w1 w2 kept_count"]
    for q in range(mask.s.shape[2]):
        p = out_dir / f"{prefix}mask_c{q}.pgm"
        write_pgm(p, mask.s[:, :, q] * 255)
        written.append(p)
        a, b = mask.centers.get(q, ("-", "-"))
        h1, h2, w1, w2 = mask.bounds.get(q, ("-",) * 4)
        lines.append(f"{q} {a} {b} {h1} {h2} {w1} {w2} {kept[q]}")
    side = out_dir / f"{prefix}masks.txt"
    side.write_text("\n".join(lines) + "\n")
    written.append(side)
    return written
