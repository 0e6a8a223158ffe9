"""Counted FLOPs and peak live values against sequence length for full
attention, the recurrent LMU and the FFT-parallel LMU.

Usage: python scripts/scaling_sweep.py [--out scaling.csv]
"""
from __future__ import annotations

import argparse
import time

from lmulm.costmodel import BACKENDS, scaling_sweep


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--nmin", type=int, default=256)
    p.add_argument("--nmax", type=int, default=8192)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--q", type=int, default=16)
    p.add_argument("--out", default=None)
    args = p.parse_args()
    ns, n = [], args.nmin
    while n <= args.nmax:
        ns.append(n)
        n *= 2
    t0 = time.time()
    report = scaling_sweep(BACKENDS, ns, d=args.d, q=args.q)
    text = report.to_csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    for b in BACKENDS:
        print(f"{b:10s} compute slope {report.slope(b):.3f}  live slope {report.live_slope(b):.3f}")
    print(f"{time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()
