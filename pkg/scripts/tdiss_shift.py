"""Scan the dissipativity parameter t for a linear-growth drift.

The map is T(x) = e_1 + V x with V the negacyclic shift on R^d, so the cocycle
norms grow like n for n <= d and the fitted Poincare exponent is 0. The scan
prints the fraction of sample traces whose Hopf partial sums look convergent.

    python3 scripts/tdiss_shift.py [--dim 400] [--samples 100] [--seed 11]
"""

import argparse

import numpy as np

from ergolab.gaussian import AffineMap, GaussianSpace, negacyclic_shift, tdiss_scan


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dim", type=int, default=400)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    d = args.dim
    A = AffineMap(np.eye(d)[0], negacyclic_shift(d))
    grid = [0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0]
    scan = tdiss_scan(GaussianSpace(np.ones(d)), A, grid, d, args.samples, args.seed)
    print("    t   conv   div   undecided")
    for t, (c, dv, u) in zip(scan.t_grid, scan.counts):
        print(f"{t:5.2f}  {c:5d} {dv:5d}  {u:5d}")
    print(f"band {scan.band}; delta_hat {scan.delta_hat} ({scan.delta_model}); bounds {scan.bounds}; "
          f"intersects {scan.intersects}")


if __name__ == "__main__":
    main()
