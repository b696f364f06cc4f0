#!/usr/bin/env python3
"""Recompute stacked probabilities from meta.json and the level-0 test matrix.

usage: check_stacked.py <run>/stacked [tolerance]
Exits 1 when any prediction deviates from sigmoid(w.x + b) by the tolerance or more.
"""
import json
import math
import sys
from pathlib import Path


def sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def main():
    if len(sys.argv) < 2:
        print(__doc__.strip(), file=sys.stderr)
        return 64
    root = Path(sys.argv[1])
    tol = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-9
    meta = json.loads((root / "meta.json").read_text())
    level0 = json.loads((root / "level0_test.json").read_text())

    if meta["model_order"] != level0["model_order"]:
        print("column order mismatch", file=sys.stderr)
        return 1
    w, b = meta["coefficients"], meta["intercept"]
    rows, probs = level0["level0"], level0["stacked_probabilities"]
    if not rows or len(rows) != len(probs):
        print("empty or ragged level-0 matrix", file=sys.stderr)
        return 1

    worst = 0.0
    for x, p in zip(rows, probs):
        z = b + math.fsum(wi * xi for wi, xi in zip(w, x))
        worst = max(worst, abs(sigmoid(z) - p))
    labels_ok = all((p >= meta["threshold"]) == bool(l)
                    for p, l in zip(probs, level0["stacked_labels"]))
    print(f"rows {len(rows)}  max |diff| {worst:.3e}  labels {'ok' if labels_ok else 'MISMATCH'}")
    return 0 if worst < tol and labels_ok else 1


if __name__ == "__main__":
    sys.exit(main())
