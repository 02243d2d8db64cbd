#!/usr/bin/env python3
"""Fitted decay rates of single-shell data in the Low and High frequency regimes.

Low shells decay like 2^(2j); High shells like 2^(2k - 2j). The script prints the
fitted rate, the normalized constant and the exact Re lambda_- for comparison.
"""

import math

import numpy as np

from mhdlab import linear as L
from mhdlab.spectral import Grid3

CASES = [
    # grid, mode index, (j, k), xi, time window
    (Grid3(4, 4, 32, Lz=16 * math.pi), (0, 0, 12), (0, 0), (0, 0, 1.5), (0, 20)),
    (Grid3(4, 4, 32, Lz=16 * math.pi), (0, 0, 6), (-1, -1), (0, 0, 0.75), (0, 60)),
    (Grid3(48, 4, 16, 4 * math.pi, 2 * math.pi, 16 * math.pi), (11, 0, 6), (2, -1), (5.5, 0, 0.75), (2, 200)),
    (Grid3(48, 4, 16, 4 * math.pi, 2 * math.pi, 16 * math.pi), (22, 0, 6), (3, -1), (11, 0, 0.75), (2, 800)),
]


def main() -> None:
    print(f"{'regime':>6} {'j':>3} {'k':>3} {'fitted rate':>14} {'constant':>10} {'-Re lambda_-':>14}")
    for g, mode, (j, k), xi, (t0, t1) in CASES:
        yh = np.zeros((3,) + g.fshape, complex)
        yh[0][mode] = g.npoints / 2
        s0 = L.LinearState.from_hats(g, yh, np.zeros_like(yh))
        times = np.linspace(t0, t1, 400)
        g2 = [L.block_energy(s, j, k)[0] for s in L.solve_linear_exact(s0, None, times)]
        rate = -L.fit_decay_rate(times, g2) / 2
        reg = L.regime(j, k)
        scale = 4.0**j if reg == "Low" else 4.0 ** (k - j)
        exact = -L.eigenvalues(xi).lam_minus.real
        print(f"{reg:>6} {j:3d} {k:3d} {rate:14.6g} {rate / scale:10.4f} {exact:14.6g}")


if __name__ == "__main__":
    main()
