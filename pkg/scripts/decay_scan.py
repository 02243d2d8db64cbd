#!/usr/bin/env python3
"""Print Re/Im of lambda_- along a few frequency directions."""

import argparse
import math

import numpy as np

from mhdlab.linear import decay_scan

DIRECTIONS = {
    "e3": (0.0, 0.0, 1.0),
    "e1": (1.0, 0.0, 0.0),
    "diagonal": (1 / math.sqrt(2), 0.0, 1 / math.sqrt(2)),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kmin", type=float, default=0.5)
    ap.add_argument("--kmax", type=float, default=1e3)
    ap.add_argument("--count", type=int, default=12)
    args = ap.parse_args()
    mags = np.geomspace(args.kmin, args.kmax, args.count)
    for name, d in DIRECTIONS.items():
        print(f"# direction {name}")
        print(f"{'|xi|':>12} {'Re lambda_-':>22} {'Im lambda_-':>22}")
        for r in decay_scan(d, mags):
            print(f"{r['k']:12.5g} {r['re']:22.15g} {r['im']:22.15g}")


if __name__ == "__main__":
    main()
