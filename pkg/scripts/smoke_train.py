"""Baseline vs TargetDrop on the toy dataset, then CAM heatmaps from the TargetDrop model."""

import argparse
import sys

from targetdrop.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/smoke")
    ap.add_argument("--epochs", type=int, default=4)
    a = ap.parse_args()
    for drop in ("none", "targetdrop"):
        code = main(["train", "--out", f"{a.out}/{drop}", "--set", f"drop={drop}", "--set", f"epochs={a.epochs}"])
        if code:
            sys.exit(code)
    sys.exit(main(["cam", "--out", f"{a.out}/cam", "--checkpoint", f"{a.out}/targetdrop/model.ckpt"]))
