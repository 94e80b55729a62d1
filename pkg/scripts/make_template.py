"""Regenerate the bundled K=6 template network (55 two-arm studies).

Pair frequencies follow a star anchored at treatment 1 (7 studies per pair)
plus a ring 2-3-4-5-6-2 (4 studies per pair).  Arm sizes are drawn once from
{20, ..., 120}.  The output is committed; rerunning reproduces it exactly.
"""
import argparse
import csv
from pathlib import Path

import numpy as np

STAR = [(1, k) for k in range(2, 7)]
RING = [(2, 3), (3, 4), (4, 5), (5, 6), (2, 6)]


def build(seed=20240601):
    rng = np.random.default_rng(seed)
    pairs = [p for p in STAR for _ in range(7)] + [p for p in RING for _ in range(4)]
    rows = []
    for i, (a, b) in enumerate(pairs, start=1):
        for t in (a, b):
            rows.append((f"s{i:02d}", t, int(rng.integers(20, 121))))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument(
        "--out",
        default=Path(__file__).resolve().parents[1] / "src/nmarank/data/template_k6.csv",
    )
    args = ap.parse_args()
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["study_id", "treatment", "total"])
        w.writerows(build())
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
