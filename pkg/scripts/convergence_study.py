"""Grid refinement on x'(t) = -x(t - 1), Phi = 1, against the exact piecewise polynomial.

The scheme is first order: each halving of delta should roughly halve both the
nodal error and the residual.

    python3 scripts/convergence_study.py [--levels N] [--csv PATH]
"""

import argparse
import csv
import sys

import numpy as np

from sdde.grid_fn import Prehistory
from sdde.rhs import linear_constant_delay
from sdde.solver import SolverConfig, solve_global


def exact(t):
    t = np.asarray(t, dtype=float)
    return np.where(t <= 0, 1.0, np.where(t <= 1, 1.0 - t, 1.0 - t + 0.5 * (t - 1) ** 2))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, default=5)
    ap.add_argument("--delta0", type=float, default=1e-2)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args()

    G = linear_constant_delay(1.0, [1.0], [-1.0])
    rows, prev = [], None
    for k in range(args.levels):
        delta = args.delta0 / 2 ** k
        rec = solve_global(Prehistory.constant(1.0, delta, 1.0), G, 2.0, SolverConfig(delta=delta))
        u = rec.trajectory
        err = float(np.abs(u.values[:, 0] - exact(u.nodes)).max())
        rate = prev / err if prev else float("nan")
        rows.append((delta, err, rate, rec.residual, rec.iterations[-1]))
        prev = err

    out = csv.writer(open(args.csv, "w", newline="") if args.csv else sys.stdout)
    out.writerow(["delta", "max_error", "error_ratio", "residual", "iterations"])
    for r in rows:
        out.writerow([f"{r[0]:.6g}", f"{r[1]:.6e}", f"{r[2]:.4f}", f"{r[3]:.6e}", r[4]])


if __name__ == "__main__":
    main()
