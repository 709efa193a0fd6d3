#!/usr/bin/env python3
"""Ablation sweep over head variants on a seeded synthetic fixture.

Covers the fusion functions, tuning-side assignments, weight sharing, layer
count, and dropped-term variants, each trained identically; prints one
accuracy row per variant plus the frozen baseline.

Usage: python scripts/run_ablation.py [--seed 7] [--axes terms,fusion]
"""

import argparse
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from aptkit import synth
from aptkit.cli import run_ablation


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--axes", default="terms,fusion,tuning,weights,layers")
    parser.add_argument("--epochs", type=int, default=None)
    args = parser.parse_args()

    axes = [a for a in args.axes.split(",") if a]
    with tempfile.TemporaryDirectory() as tdir:
        synth.write_dataset(synth.generate(synth.SynthConfig(seed=args.seed)), tdir)
        rows = []
        for axis in axes:  # one axis at a time, like a deltas-from-default table
            rows.extend(run_ablation(tdir, [axis], seed=args.seed, epochs=args.epochs))
    seen = set()
    print(f"{'variant':<32} {'val_acc':>8}")
    for row, acc in rows:
        label = row.get("variant") or " ".join(f"{k}={v}" for k, v in row.items())
        if label in seen:
            continue
        seen.add(label)
        print(f"{label:<32} {acc:8.4f}")


if __name__ == "__main__":
    main()
