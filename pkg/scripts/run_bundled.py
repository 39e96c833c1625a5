"""Solve every bundled problem and print a one-line summary per problem.

    python3 scripts/run_bundled.py [--delta D] [--out DIR]
"""

import argparse
import time
from pathlib import Path

from sdde.problem_file import build, bundled_problems, resolve_problem
from sdde.solver import solve_global


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--delta", type=float, default=None)
    ap.add_argument("--out", type=Path, default=None, help="write <name>.csv/.json here")
    args = ap.parse_args()
    print(f"{'problem':<14}{'status':<17}{'T0':>8}{'stages':>8}{'rho':>10}"
          f"{'ratio':>9}{'theory':>8}{'residual':>11}{'sec':>7}")
    for name in bundled_problems():
        pf, _ = resolve_problem(name)
        prob = build(pf, args.delta)
        t0 = time.perf_counter()
        rec = solve_global(prob.phi, prob.rhs, prob.T, prob.cfg)
        dt = time.perf_counter() - t0
        print(f"{name:<14}{rec.status:<17}{rec.T0:>8.4f}{len(rec.alphas_used):>8d}"
              f"{rec.rho_used[-1]:>10.3g}{max(rec.measured_contraction):>9.2e}"
              f"{rec.theoretical_contraction[-1]:>8.2f}{rec.residual:>11.2e}{dt:>7.2f}")
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
            rec.write(args.out / f"{name}.csv", args.out / f"{name}.json")


if __name__ == "__main__":
    main()
