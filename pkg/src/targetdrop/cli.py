"""``targetdrop`` command line: gradcheck, mask-stats, train, cam, rerun.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error.
Every run writes ``manifest.json`` into its output directory holding the
effective config and SHA-256 checksums of inputs and outputs; ``rerun``
replays a manifest and compares checksums.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .attention import attention_map, init_attention
from .baselines import cutout_mask, dropblock_mask, dropout_mask, mask_stats, spatialdropout_mask
from .config import ConfigError, coerce, format_value, load_file, resolve
from .data import ToyConfig, make_toy_dataset, make_toy_splits, normalize_images
from .mask import DropConfig, build_mask
from .model import ModelConfig, TinyCNN, load_checkpoint, save_checkpoint
from .netpbm import colorize, dump_mask, read_netpbm, write_pgm, write_ppm
from .train import TrainConfig, compute_cam, train, upsample_nearest, write_log

log = logging.getLogger("targetdrop")

MANIFEST = "manifest.json"

DEFAULTS = {
    "gradcheck": {
        "trials": 50, "eps": 1e-3, "tol": 1e-4, "net_eps": 1e-3, "net_tol": 1e-3,
        "inject_fault": "", "seed": 0,
    },
    "mask-stats": {
        "features": "", "height": 32, "width": 32, "channels": 64,
        "gamma": 0.15, "k": 5, "r": 16,
        "dropout_rate": 0.1, "spatial_rate": 0.15, "dropblock_seed_rate": 0.01, "dropblock_block": 5,
        "cutout_size": 16, "montage_channels": 8, "montage_scale": 4, "seed": 0,
    },
    "train": {
        "classes": 10, "n_per_class": 200, "test_per_class": 50, "size": 16, "noise": 24.0,
        "drop": "none", "gamma": 0.15, "k": 5, "r": 16, "rate": 0.1, "insert_after": (1, 2),
        "gamma_schedule": "constant",
        "epochs": 4, "batch_size": 32, "lr": 0.005, "momentum": 0.9, "nesterov": True,
        "lr_decay": 0.2, "milestones": (0.4, 0.6, 0.8), "weight_decay": 0.0, "augment": False,
        "seed": 0,
    },
    "cam": {
        "checkpoint": "", "image": "", "image_index": 0, "size": 16, "noise": 24.0,
        "scale": 8, "seed": 0,
    },
}


class UsageError(Exception):
    pass


# --- helpers --------------------------------------------------------------


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _cfg_strings(cfg: dict) -> dict[str, str]:
    return {k: format_value(v) for k, v in cfg.items()}


def write_manifest(out: Path, command: str, cfg: dict, sweep: list[str], inputs: list[str]) -> Path:
    outputs = {
        str(p.relative_to(out)): sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != MANIFEST
    }
    manifest = {
        "command": command,
        "config": _cfg_strings(cfg),
        "sweep": sweep,
        "inputs": {p: sha256(p) for p in inputs},
        "outputs": outputs,
    }
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def synthetic_features(h: int, w: int, c: int, seed: int) -> np.ndarray:
    """Non-negative feature maps: a few Gaussian bumps per channel plus weak noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    u = np.zeros((h, w, c))
    for q in range(c):
        for _ in range(int(rng.integers(1, 4))):
            a, b = rng.uniform(0, h), rng.uniform(0, w)
            sigma = rng.uniform(1.0, max(h, w) / 4)
            u[:, :, q] += rng.uniform(0.5, 2.0) * np.exp(-((yy - a) ** 2 + (xx - b) ** 2) / (2 * sigma**2))
    return np.maximum(u + rng.normal(0, 0.05, u.shape), 0.0)


def montage(mask_s: np.ndarray, channels: int, scale: int) -> np.ndarray:
    """First ``channels`` keep-maps side by side, 255 kept / 0 dropped, grey separators."""
    h, w, c = mask_s.shape
    n = min(channels, c)
    tiles = []
    for q in range(n):
        tiles.append(np.kron(mask_s[:, :, q] * 255, np.ones((scale, scale))))
        if q < n - 1:
            tiles.append(np.full((h * scale, 2), 128.0))
    return np.hstack(tiles)


# --- subcommands ----------------------------------------------------------


def cmd_gradcheck(cfg: dict, out: Path) -> tuple[int, list[str]]:
    results = gradcheck.run_all(cfg["trials"], cfg["eps"], cfg["tol"], cfg["net_eps"], cfg["net_tol"],
                                cfg["seed"], cfg["inject_fault"])
    with open(out / "gradcheck.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["check", "trials", "max_rel_err", "tol", "passed"])
        for r in results:
            w.writerow([r.name, r.trials, repr(r.max_rel_err), repr(r.tol), int(r.passed)])
    print(f"{'check':<24}{'trials':>7}{'max rel err':>14}{'tol':>10}  result")
    for r in results:
        print(f"{r.name:<24}{r.trials:>7}{r.max_rel_err:>14.3e}{r.tol:>10.0e}  {'PASS' if r.passed else 'FAIL'}")
    return (0 if all(r.passed for r in results) else 1), []


def cmd_mask_stats(cfg: dict, out: Path) -> tuple[int, list[str]]:
    inputs = []
    if cfg["features"]:
        u = np.load(cfg["features"])
        if u.ndim != 3:
            raise ConfigError(f"feature tensor must be (H, W, C), got {u.shape}")
        inputs.append(cfg["features"])
    else:
        u = synthetic_features(cfg["height"], cfg["width"], cfg["channels"], cfg["seed"])
    u = u.astype(np.float64)
    shape = u.shape
    seed = cfg["seed"]
    gate = init_attention(shape[2], cfg["r"], seed)
    drop_cfg = DropConfig(cfg["gamma"], cfg["k"], seed=seed)
    masks = {
        "targetdrop": build_mask(u, attention_map(u, gate), drop_cfg),
        "dropout": dropout_mask(shape, cfg["dropout_rate"], seed),
        "spatialdropout": spatialdropout_mask(shape, cfg["spatial_rate"], seed),
        "dropblock": dropblock_mask(shape, cfg["dropblock_seed_rate"], cfg["dropblock_block"], seed),
        "cutout": cutout_mask(shape, cfg["cutout_size"], seed),
    }
    rows = []
    for method, mk in masks.items():
        dump_mask(mk, out / method)
        write_pgm(out / f"montage_{method}.pgm", montage(mk.s, cfg["montage_channels"], cfg["montage_scale"]))
        st = mask_stats(mk)
        rows.append([method, repr(st.drop_fraction), repr(st.mean_block_size), repr(st.contiguity)])
    with open(out / "mask_stats.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["method", "drop_fraction", "mean_block_size", "contiguity"])
        w.writerows(rows)
    td = masks["targetdrop"]
    print(f"targetdrop: {int(td.t.sum())} of {shape[2]} channels targeted")
    for row in rows:
        print(f"{row[0]:<16} drop_fraction={float(row[1]):.4f} mean_block={float(row[2]):.2f} "
              f"contiguity={float(row[3]):.3f}")
    return 0, inputs


def _train_configs(cfg: dict) -> tuple[ToyConfig, ModelConfig, TrainConfig]:
    toy = ToyConfig(cfg["classes"], cfg["n_per_class"], cfg["size"], 3, cfg["noise"], cfg["seed"])
    model_cfg = ModelConfig(
        in_channels=3, classes=cfg["classes"], drop=cfg["drop"], insert_after=tuple(cfg["insert_after"]),
        gamma=cfg["gamma"], k=cfg["k"], r=cfg["r"], rate=cfg["rate"], gamma_schedule=cfg["gamma_schedule"],
        seed=cfg["seed"],
    )
    train_cfg = TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"], momentum=cfg["momentum"],
        nesterov=cfg["nesterov"], lr_decay=cfg["lr_decay"], milestones=tuple(cfg["milestones"]),
        weight_decay=cfg["weight_decay"], augment=cfg["augment"], seed=cfg["seed"],
    )
    return toy, model_cfg, train_cfg


def parse_sweeps(sweeps: list[str], defaults: dict) -> list[tuple[str, list[str]]]:
    axes = []
    for item in sweeps:
        if "=" not in item:
            raise ConfigError(f"--sweep expects KEY=v1,v2,..., got {item!r}")
        key, vals = item.split("=", 1)
        key = key.strip()
        if key not in defaults:
            raise ConfigError(f"unknown sweep key {key!r}")
        values = [v.strip() for v in vals.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"--sweep {key} has no values")
        axes.append((key, values))
    return axes


def cmd_train(cfg: dict, out: Path, sweeps: list[str]) -> tuple[int, list[str]]:
    axes = parse_sweeps(sweeps, DEFAULTS["train"])
    points = []
    for combo in itertools.product(*[vals for _, vals in axes]):
        point = dict(cfg)
        suffix = ""
        for (key, _), val in zip(axes, combo):
            point[key] = coerce(val, DEFAULTS["train"][key])
            suffix += f"_{key}{val}"
        points.append((suffix, point, _train_configs(point)))  # validates every point up front
    for suffix, point, (toy, model_cfg, train_cfg) in points:
        train_ds, test_ds = make_toy_splits(toy, point["test_per_class"])
        model = TinyCNN(model_cfg)
        log.info("training%s: drop=%s", suffix or "", model_cfg.drop)
        rows = train(model, train_ds, train_cfg, test_ds)
        write_log(rows, out / f"train_log{suffix}.csv")
        save_checkpoint(model, out / f"model{suffix}.ckpt")
        last = rows[-1]
        print(f"train{suffix or ''}: final loss {last['train_loss']:.4f} "
              f"train acc {last['train_acc']:.3f} test acc {last['test_acc']:.3f}")
    (out / "toy.cfg").write_text(points[0][2][0].to_text())
    return 0, []


def cmd_cam(cfg: dict, out: Path) -> tuple[int, list[str]]:
    ckpt = cfg["checkpoint"]
    if not ckpt or not Path(ckpt).is_file():
        raise UsageError(f"checkpoint not found: {ckpt!r}")
    model = load_checkpoint(ckpt)
    inputs = [ckpt]
    if cfg["image"]:
        img = read_netpbm(cfg["image"])
        if img.ndim == 2:
            img = img[..., None]
        inputs.append(cfg["image"])
    else:
        ds = make_toy_dataset(model.cfg.classes, 1, cfg["seed"], cfg["size"], model.cfg.in_channels,
                              cfg["noise"], "test")
        img = ds.images[cfg["image_index"] % len(ds)]
    if img.shape[2] != model.cfg.in_channels:
        raise ConfigError(f"image has {img.shape[2]} channels, model expects {model.cfg.in_channels}")
    stats = getattr(model, "norm_stats", None)
    if stats is None:
        x = img.astype(np.float64)
        stats = (x.mean(axis=(0, 1)), np.maximum(x.std(axis=(0, 1)), 1e-12))
    x = normalize_images(img, *stats)
    scale = cfg["scale"]
    rgb_in = img if img.shape[2] == 3 else np.repeat(img[:, :, :1], 3, axis=2)
    write_ppm(out / "input.ppm", upsample_nearest(rgb_in, img.shape[0] * scale, img.shape[1] * scale))
    model.set_phase("inference")
    logits = model.forward(x[None])[0]
    with open(out / "cam_logits.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["class", "logit"])
        for j in range(model.cfg.classes):
            heat = compute_cam(model, x, j)
            big = upsample_nearest(heat, heat.shape[0] * scale, heat.shape[1] * scale)
            write_ppm(out / f"cam_class{j}.ppm", colorize(big))
            w.writerow([j, repr(float(logits[j]))])
    print(f"wrote {model.cfg.classes} CAM heatmaps; predicted class {int(np.argmax(logits))}")
    return 0, inputs


# --- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
    common.add_argument("--out", default="runs/latest", help="output directory")
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")

    p = argparse.ArgumentParser(prog="targetdrop", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference checks of every backward pass")
    g.add_argument("--eps", type=float, help="shorthand for --set eps=X")
    sub.add_parser("mask-stats", parents=[common], help="compare TargetDrop against baseline masks")
    t = sub.add_parser("train", parents=[common], help="train TinyCNN on the toy dataset")
    t.add_argument("--sweep", action="append", default=[], metavar="KEY=v1,v2,...")
    c = sub.add_parser("cam", parents=[common], help="class activation maps for one image")
    c.add_argument("--checkpoint", help="shorthand for --set checkpoint=PATH")
    c.add_argument("--image", help="shorthand for --set image=PATH (PGM/PPM)")
    r = sub.add_parser("rerun", help="replay a manifest and verify its outputs bit-exactly")
    r.add_argument("manifest")
    r.add_argument("--out", help="output directory (default: <manifest dir>/rerun)")
    return p


def _effective_config(args) -> dict:
    layers = []
    if args.config:
        layers.append(load_file(args.config))
    sets = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        sets[k.strip()] = v.strip()
    for flag in ("seed", "eps", "checkpoint", "image"):
        val = getattr(args, flag, None)
        if val is not None:
            sets[flag] = str(val)
    layers.append(sets)
    cfg = resolve(DEFAULTS[args.command], *layers)
    for key in ("checkpoint", "image", "features"):
        if cfg.get(key):
            cfg[key] = str(Path(cfg[key]).resolve())
    return cfg


def execute(command: str, cfg: dict, out: Path, sweeps: list[str]) -> int:
    out.mkdir(parents=True, exist_ok=True)
    if command == "gradcheck":
        code, inputs = cmd_gradcheck(cfg, out)
    elif command == "mask-stats":
        code, inputs = cmd_mask_stats(cfg, out)
    elif command == "train":
        code, inputs = cmd_train(cfg, out, sweeps)
    else:
        code, inputs = cmd_cam(cfg, out)
    write_manifest(out, command, cfg, sweeps, inputs)
    return code


def rerun(manifest_path: Path, out: Path | None) -> int:
    manifest = json.loads(manifest_path.read_text())
    command = manifest["command"]
    if command not in DEFAULTS:
        raise ConfigError(f"manifest names unknown command {command!r}")
    cfg = resolve(DEFAULTS[command], manifest["config"])
    for path, digest in manifest["inputs"].items():
        if not Path(path).is_file() or sha256(path) != digest:
            print(f"input changed or missing: {path}")
            return 1
    out = out or manifest_path.parent / "rerun"
    execute(command, cfg, out, manifest.get("sweep", []))
    fresh = json.loads((out / MANIFEST).read_text())["outputs"]
    expected = manifest["outputs"]
    bad = sorted(k for k in set(expected) | set(fresh) if expected.get(k) != fresh.get(k))
    for name in bad:
        print(f"MISMATCH {name}")
    print(f"rerun: {len(expected) - len(bad)}/{len(expected)} outputs identical")
    return 1 if bad else 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            return rerun(Path(args.manifest), Path(args.out) if args.out else None)
        cfg = _effective_config(args)
        if getattr(args, "sweep", None) and args.command != "train":
            raise ConfigError("--sweep is only valid for train")
        return execute(args.command, cfg, Path(args.out), getattr(args, "sweep", []))
    except (ConfigError, UsageError, ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
