"""Continuation on x' = x(t)^2, Phi = 1: the slope bound doubles until the horizon stalls near t = 1.

Prints the horizon reached at every stage so the approach to the singularity
of 1 / (1 - t) is visible.

    python3 scripts/blowup_demo.py [--delta D]
"""

import argparse

from sdde.grid_fn import Prehistory, sup_norm
from sdde.rhs import make_quadratic_zero_lag
from sdde.solver import SolverConfig, solve_global


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--delta", type=float, default=1e-3)
    ap.add_argument("--h", type=float, default=0.05)
    ap.add_argument("--T", type=float, default=2.0)
    args = ap.parse_args()

    phi = Prehistory.constant(args.h, args.delta, 1.0)
    rec = solve_global(phi, make_quadratic_zero_lag(args.h), args.T, SolverConfig(delta=args.delta))
    print(f"{'stage':>5}{'alpha':>12}{'rho':>12}{'horizon':>10}{'iters':>7}")
    for k, (a, r, t, it) in enumerate(zip(rec.alphas_used, rec.rho_used, rec.stage_times,
                                          rec.iterations), start=1):
        print(f"{k:>5}{a:>12.4g}{r:>12.4g}{t:>10.4f}{it:>7d}")
    print(f"status {rec.status}, T0 = {rec.T0:.4f} (exact blow-up time 1), "
          f"peak |x| = {sup_norm(rec.trajectory):.4g}")


if __name__ == "__main__":
    main()
