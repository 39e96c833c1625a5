"""Perturbation ladders for a bundled problem: ratios of solution change to perturbation size.

    python3 scripts/dependence_ladder.py [--problem NAME] [--eps 1e-2,1e-3,1e-4]
"""

import argparse

import numpy as np

from sdde.grid_fn import GridFunction, Prehistory
from sdde.problem_file import build, resolve_problem
from sdde.verify import dependence_on_datum, dependence_on_rhs


def bump(phi, eps):
    shape = np.sin(np.pi * (phi.grid.nodes - phi.grid.a) / phi.h) ** 2
    return Prehistory(GridFunction(phi.grid, phi.fn.values + eps * shape[:, None]))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="linear_delay")
    ap.add_argument("--delta", type=float, default=None)
    ap.add_argument("--eps", default="1e-2,1e-3,1e-4")
    args = ap.parse_args()
    eps = [float(e) for e in args.eps.split(",")]

    prob = build(resolve_problem(args.problem)[0], args.delta)
    d = prob.rhs.dim
    datum = dependence_on_datum(prob.rhs, prob.phi, [bump(prob.phi, e) for e in eps],
                                cfg=prob.cfg, T=prob.T)
    models = [prob.rhs.shifted(lambda t, e=e: np.full(d, e * np.sin(t))) for e in eps]
    rhs = dependence_on_rhs(prob.rhs, models, prob.phi, cfg=prob.cfg, T=prob.T)
    for title, rep in (("prehistory", datum), ("right-hand side", rhs)):
        print(f"{title}: T1 = {rep.T1:g}, rho = {rep.rho:.4g}, bounded = {rep.bounded}")
        print(f"  {'size':>12}{'difference':>14}{'ratio':>12}")
        for size, diff, ratio in rep.pairs:
            print(f"  {size:>12.4e}{diff:>14.4e}{ratio:>12.5g}")


if __name__ == "__main__":
    main()
