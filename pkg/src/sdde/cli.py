"""Command-line front end: ``sdde {solve,certify,depend-datum,depend-rhs} ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import NoConvergence, ParseError, RhoOverflow, SddeError, StageInconsistency, \
    ValidationError
from .grid_fn import GridFunction, Prehistory
from .problem_file import bundled_problems, build, resolve_problem
from .solver import BLOW_UP, GLOBAL, atomic_write_text, solve_global
from .verify import certify_bounds, dependence_on_datum, dependence_on_rhs

log = logging.getLogger("sdde")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED = 2

KEYS_HELP = """\
problem file format (unknown sections or keys are errors):

  [problem]
  family = constant_delay | academic | state_delay | integro | quadratic
  dim = 1                      state dimension d
  h = 1.0                      delay horizon
  T = 2.0                      final time
  # constant_delay: x' = sum_j c_j x(t - lag_j) + forcing
  lags = 1.0                   comma list in [0, h]
  coeffs = -1.0                one per lag
  forcing = 0.0                optional, d entries
  # academic: x' = x(t - |x(t)|)   (no parameters, dim = 1)
  # quadratic: x' = x(t)^2         (no parameters, dim = 1)
  # state_delay: x' = sum_i c_i x(t - clip(offset_i + gain_i |x(t)|, 0, h))
  offsets = 0.0, 0.0
  gains = 1.0, 0.5
  coeffs = 0.5, 0.5
  # integro: x' = f_gain x(t) + g3_gain int_0^h g_gain x(t-s) k(t-s) ds
  f_gain = 0.0
  g3_gain = 1.0
  g_gain = 1.0
  kernel = exp | const         k(t) = kernel_scale exp(-kernel_rate t)
  kernel_rate = 1.0
  kernel_scale = 1.0
  kernel_mode = scalar | componentwise

  [prehistory]
  kind = constant | linear | samples | file
  value = 1.0                  constant: 1 or d entries
  intercept = 1.0              linear: a + b t
  slope = 0.5
  values = 1.0, 0.8, 1.0       samples: uniform on [-h, 0], refined exactly
  path = "phi.csv"             file: CSV t,x_1,... on [-h, 0]

  [solver]
  delta = 1e-3                 grid spacing, must divide h and T
  theta = 0.7                  contraction target in (0, 1)
  fp_tol = 1e-10               Picard stopping tolerance
  max_iters = 200
  alpha1 = none                initial slope bound (none: max(1, 2 sup|Phi'|))
  alpha_max = 1e8
  rho_max = 1e15
  max_stages = 60
  clip_rhs = true

  [output]                     paths, relative to --out
  trajectory = "x.csv"
  metadata = "x.json"
  pairs = "x_pairs.csv"
  summary = "x_summary.json"

exit status: 0 success, 1 usage or problem-file error, 2 solver failure,
unexpected blow-up, or a failed check.
"""


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sdde", description="Picard solver for delay equations with state-dependent delay.",
        epilog=KEYS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_file=True):
        if needs_file:
            sp.add_argument("problem", help=f"problem file, or a bundled name "
                                            f"({', '.join(bundled_problems())})")
        sp.add_argument("--delta", type=float, default=None, help="override [solver] delta")
        sp.add_argument("--seed", type=int, default=0, help="random seed")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")

    s = sub.add_parser("solve", help="solve one IVP, write trajectory CSV and metadata JSON")
    common(s)
    s.add_argument("--allow-blowup", action="store_true", help="exit 0 on status BlowUp")

    c = sub.add_parser("certify", help="randomized check of the operator bounds")
    common(c, needs_file=False)
    c.add_argument("--samples", type=int, default=200, help="samples per bound and weight")

    for name, what in (("depend-datum", "prehistory"), ("depend-rhs", "right-hand side")):
        d = sub.add_parser(name, help=f"perturbation ladder for the {what}")
        common(d)
        d.add_argument("--eps", type=lambda s: [float(x) for x in s.split(",")],
                       default=[1e-2, 1e-3, 1e-4], help="comma list of perturbation sizes")
    return p


def _outputs(pf, stem: str, out: Path) -> dict:
    defaults = {"trajectory": f"{stem}.csv", "metadata": f"{stem}.json",
                "pairs": f"{stem}_pairs.csv", "summary": f"{stem}_summary.json"}
    defaults.update({k: str(v) for k, v in pf.output.items()})
    return {k: out / v for k, v in defaults.items()}


def _bump(phi: Prehistory, eps: float) -> Prehistory:
    t = phi.grid.nodes
    shape = np.sin(np.pi * (t - phi.grid.a) / phi.h) ** 2
    return Prehistory(GridFunction(phi.grid, phi.fn.values + eps * shape[:, None]))


def _cmd_solve(args) -> int:
    pf, stem = resolve_problem(args.problem)
    prob = build(pf, args.delta)
    rec = solve_global(prob.phi, prob.rhs, prob.T, prob.cfg)
    paths = _outputs(pf, stem, args.out)
    rec.write(paths["trajectory"], paths["metadata"])
    log.info("status %s, T0 = %g, stages %d", rec.status, rec.T0, len(rec.alphas_used))
    if rec.status == GLOBAL or (rec.status == BLOW_UP and args.allow_blowup):
        return EXIT_OK
    print(f"sdde: status {rec.status} at T0 = {rec.T0:g}", file=sys.stderr)
    return EXIT_FAILED


def _cmd_certify(args) -> int:
    report = certify_bounds(args.seed, {"samples": args.samples})
    atomic_write_text(args.out / "certificate.csv", report.to_csv())
    atomic_write_text(args.out / "certificate.json", report.to_json())
    for r in report.results:
        if not r.passed:
            print(f"sdde: bound {r.bound} failed at rho={r.rho:g} ({r.failures} samples)",
                  file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAILED


def _cmd_depend(args) -> int:
    pf, stem = resolve_problem(args.problem)
    prob = build(pf, args.delta)
    if args.command == "depend-datum":
        perts = [_bump(prob.phi, e) for e in args.eps]
        report = dependence_on_datum(prob.rhs, prob.phi, perts, cfg=prob.cfg, T=prob.T)
    else:
        d = prob.rhs.dim
        models = [prob.rhs.shifted(lambda t, e=e: np.full(d, e * np.sin(t)),
                                   f"{e:g} sin(t) shift") for e in args.eps]
        report = dependence_on_rhs(prob.rhs, models, prob.phi, cfg=prob.cfg, T=prob.T)
    paths = _outputs(pf, stem, args.out)
    atomic_write_text(paths["pairs"], report.to_csv())
    atomic_write_text(paths["summary"], report.to_json())
    if not report.bounded:
        print(f"sdde: ratios not bounded within a factor 2 (C = {report.C_observed:g})",
              file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    handlers = {"solve": _cmd_solve, "certify": _cmd_certify,
                "depend-datum": _cmd_depend, "depend-rhs": _cmd_depend}
    try:
        return handlers[args.command](args)
    except (ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"sdde: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoConvergence, RhoOverflow, StageInconsistency) as exc:
        print(f"sdde: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except SddeError as exc:
        print(f"sdde: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
