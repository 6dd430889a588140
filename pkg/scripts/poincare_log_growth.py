"""How well does the Poincare exponent fit recover 1/c from noisy c log n data?

    python3 scripts/poincare_log_growth.py [--N 10000] [--reps 50]
"""

import argparse

import numpy as np

from ergolab._numerics import rng_for
from ergolab.errors import Undecided
from ergolab.gaussian import poincare_exponent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--N", type=int, default=10_000)
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    n = np.arange(1, args.N + 1, dtype=float)
    print("    c    noise sd   median rel err   max rel err   undecided")
    for c in (0.25, 0.5, 1.0, 2.0, 4.0):
        for sd in (0.0, 0.1, 0.3):
            errs, und = [], 0
            for r in range(args.reps):
                s = c * np.log(n) + rng_for(args.seed, r).normal(0, sd, n.size)
                try:
                    errs.append(abs(poincare_exponent(s).delta * c - 1))
                except Undecided:
                    und += 1
            med = np.median(errs) if errs else float("nan")
            mx = max(errs) if errs else float("nan")
            print(f"{c:5.2f}  {sd:8.2f}   {med:14.2e}   {mx:11.2e}   {und:9d}")


if __name__ == "__main__":
    main()
