"""Side-by-side mask montages for TargetDrop and the four baselines on one feature tensor.

Writes montage_<method>.pgm, mask_stats.csv and per-channel dumps under --out.
"""

import argparse
import sys

from targetdrop.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/montage")
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    sys.exit(main(["mask-stats", "--out", a.out, "--seed", str(a.seed), "--set", f"channels={a.channels}"]))
