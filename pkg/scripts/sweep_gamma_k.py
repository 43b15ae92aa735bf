"""Train TinyCNN with TargetDrop over a gamma x k grid and tabulate final accuracies."""

import argparse
import csv
import sys
from pathlib import Path

from targetdrop.cli import main


def summarize(out: Path) -> list[tuple[str, str, str]]:
    rows = []
    for log in sorted(out.glob("train_log*.csv")):
        last = list(csv.DictReader(open(log)))[-1]
        rows.append((log.stem.removeprefix("train_log_"), last["train_acc"], last["test_acc"]))
    return rows


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--gammas", default="0.05,0.1,0.15,0.2")
    ap.add_argument("--ks", default="3,5,7")
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--n-per-class", type=int, default=200)
    a = ap.parse_args()
    code = main(["train", "--out", a.out, "--set", "drop=targetdrop", "--set", f"epochs={a.epochs}",
                 "--set", f"n_per_class={a.n_per_class}", "--sweep", f"gamma={a.gammas}", "--sweep", f"k={a.ks}"])
    if code:
        sys.exit(code)
    print(f"{'point':<20}{'train':>8}{'test':>8}")
    for point, tr, te in summarize(Path(a.out)):
        print(f"{point:<20}{float(tr):>8.3f}{float(te):>8.3f}")
