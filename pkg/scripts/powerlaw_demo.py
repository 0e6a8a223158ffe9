"""Tabulate the reference loss curves over 55k-1M non-embedding parameters and
check that the fitter recovers each one.  With ``--points`` a CSV of measured
``N,loss`` rows is fitted as well.

Usage: python scripts/powerlaw_demo.py [--points runs/sizes.csv]
"""
from __future__ import annotations

import argparse
import csv

import numpy as np

from lmulm.powerlaw import REFERENCE_CURVES, fit_power_law, reference_loss


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--points", default=None)
    args = p.parse_args()
    Ns = np.geomspace(5.5e4, 1e6, 6)
    print("curve," + ",".join(f"{N:.0f}" for N in Ns) + ",fit_N_c,fit_alpha")
    for name, c in REFERENCE_CURVES.items():
        losses = [reference_loss(name, N) for N in Ns]
        fit = fit_power_law(zip(Ns, losses))
        print(f"{name}," + ",".join(f"{v:.4f}" for v in losses) + f",{fit.N_c:.4g},{fit.alpha:.4g}")
    if args.points:
        with open(args.points, newline="") as fh:
            pts = [(float(r[0]), float(r[1])) for r in csv.reader(fh) if r and r[0][0].isdigit()]
        fit = fit_power_law(pts)
        print(f"measured: N_c={fit.N_c:.4g} alpha={fit.alpha:.4g} residual={fit.residual:.3g}")


if __name__ == "__main__":
    main()
