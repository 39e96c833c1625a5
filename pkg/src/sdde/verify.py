"""Continuous-dependence experiments and randomized certificates for the operator bounds."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .grid_fn import (ATOL, RTOL, Grid, GridFunction, Prehistory, eval_at, h1_norm, restrict,
                      sobolev_embedding_check, weighted_h1_norm, weighted_l2_norm,
                      weighted_step_norm)
from .operators import (ValphaSpec, eval_lipschitz_check, history_at, integrate_rho,
                        theta_norm_estimate)
from .rhs import RhsModel
from .solver import SolutionRecord, SolverConfig, extend_prehistory, solve_global

INITIAL_DATUM = "InitialDatum"
RIGHT_HAND_SIDE = "RightHandSide"


# ---------------------------------------------------------------------------
# Dependence reports


@dataclass(frozen=True)
class DependenceReport:
    """Observed ratios ``||u - v||_{H1_rho(-h,T1)} / size`` over a perturbation ladder.

    ``pairs`` holds ``(size, difference, ratio)`` per non-skipped perturbation;
    ``skipped`` lists the input indices of zero perturbations.
    """

    pairs: tuple
    C_observed: float
    bound_type: str
    rho: float
    T1: float
    skipped: tuple = ()

    @property
    def bounded(self) -> bool:
        """Largest and smallest nonzero ratio within a factor 2 of each other."""
        ratios = [r for _, _, r in self.pairs if r > 0]
        if not ratios:
            return True
        return max(ratios) <= 2.0 * min(ratios)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["size", "difference", "ratio"])
        for row in self.pairs:
            w.writerow([format(float(x), ".17g") for x in row])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "bound_type": self.bound_type,
            "C_observed": self.C_observed,
            "bounded": self.bounded,
            "rho": self.rho,
            "T1": self.T1,
            "pairs": [list(map(float, p)) for p in self.pairs],
            "skipped": list(self.skipped),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2) + "\n"


def _common_T1(records: Sequence[SolutionRecord], T1: Optional[float]) -> float:
    reach = min(r.T0 for r in records)
    if T1 is None:
        T1 = 0.9 * reach
    if T1 > reach + 1e-12:
        raise ValueError(f"T1={T1} exceeds the common existence horizon {reach}")
    # Snap down to a grid node.
    u = records[0].trajectory
    k = math.floor((T1 - u.grid.a) / u.grid.delta + 1e-9)
    T1 = float(u.grid.a + k * u.grid.delta)
    if T1 <= 0:
        raise ValueError("common horizon is empty")
    return T1


def _norm_on(u: GridFunction, w: GridFunction, T1: float, rho: float) -> float:
    a = u.grid.a
    return weighted_h1_norm(restrict(u, a, T1) - restrict(w, a, T1), rho)


def dependence_on_datum(G: RhsModel, phi: Prehistory, perturbations: Sequence[Prehistory],
                        T1: Optional[float] = None, cfg: SolverConfig = SolverConfig(),
                        T: Optional[float] = None) -> DependenceReport:
    """Ratios ``||u - v||_{H1_rho(-h,T1)} / ||Phi - Psi||_{H1(-h,0)}``.

    Every IVP is solved on ``[0, T]`` (default ``T1``); ``rho`` is the weight of
    the reference solve's final stage.
    """
    if not perturbations:
        raise ValueError("need at least one perturbation")
    T = T1 if T is None else T
    if T is None:
        raise ValueError("give T or T1")
    ref = solve_global(phi, G, T, cfg)
    sols = [solve_global(p, G, T, cfg) for p in perturbations]
    T1 = _common_T1([ref, *sols], T1)
    rho = ref.rho_used[-1]
    pairs, skipped = [], []
    for i, (psi, sol) in enumerate(zip(perturbations, sols)):
        size = h1_norm(phi.fn - psi.fn)
        if size == 0.0:
            skipped.append(i)
            continue
        diff = _norm_on(ref.trajectory, sol.trajectory, T1, rho)
        pairs.append((size, diff, diff / size))
    c = max((r for _, _, r in pairs), default=0.0)
    return DependenceReport(tuple(pairs), c, INITIAL_DATUM, rho, T1, tuple(skipped))


def rhs_defect(F: RhsModel, G: RhsModel, u: GridFunction, T1: float) -> float:
    """``max_{t_i in [0, T1]} |F(t_i, u_{t_i}) - G(t_i, u_{t_i})|`` on unprojected histories."""
    h = -u.grid.a
    worst = 0.0
    for t in u.nodes:
        if t < -1e-12 or t > T1 + 1e-12:
            continue
        seg = history_at(u, float(max(t, 0.0)), h)
        worst = max(worst, float(np.linalg.norm(F(float(t), seg) - G(float(t), seg))))
    return worst


def dependence_on_rhs(F: RhsModel, G: Union[RhsModel, Sequence[RhsModel]], phi: Prehistory,
                      T1: Optional[float] = None, cfg: SolverConfig = SolverConfig(),
                      T: Optional[float] = None) -> DependenceReport:
    """Ratios ``||u - v||_{H1_rho(-h,T1)} / sup_t |F(t, u_t) - G(t, u_t)|`` along the F-solution ``u``.

    A perturbed model with zero defect and zero difference is reported as an
    exact match with ratio 0.
    """
    models = [G] if isinstance(G, RhsModel) else list(G)
    if not models:
        raise ValueError("need at least one perturbed model")
    T = T1 if T is None else T
    if T is None:
        raise ValueError("give T or T1")
    ref = solve_global(phi, F, T, cfg)
    sols = [solve_global(phi, g, T, cfg) for g in models]
    T1 = _common_T1([ref, *sols], T1)
    rho = ref.rho_used[-1]
    pairs, skipped = [], []
    for i, (g, sol) in enumerate(zip(models, sols)):
        defect = rhs_defect(F, g, ref.trajectory, T1)
        diff = _norm_on(ref.trajectory, sol.trajectory, T1, rho)
        if defect == 0.0:
            if diff == 0.0:
                pairs.append((0.0, 0.0, 0.0))
            else:
                skipped.append(i)
            continue
        pairs.append((defect, diff, diff / defect))
    c = max((r for _, _, r in pairs), default=0.0)
    return DependenceReport(tuple(pairs), c, RIGHT_HAND_SIDE, rho, T1, tuple(skipped))


def extension_ratio(phi: Prehistory, psi: Prehistory, T1: float, rho: float) -> float:
    """``||Phi_hat - Psi_hat||_{H1_rho(-h,T1)} / ||Phi - Psi||_{H1}``, the ratio for ``G = 0``."""
    a = extend_prehistory(phi, T1).fn
    b = extend_prehistory(psi, T1).fn
    return weighted_h1_norm(a - b, rho) / h1_norm(phi.fn - psi.fn)


# ---------------------------------------------------------------------------
# Bound certificates


BOUNDS = ("sobolev", "holder", "integrate_l2", "integrate_h1", "theta", "eval_lipschitz")
DEFAULT_SIZES = {"samples": 200, "rhos": (0.5, 1.0, 2.0, 8.0), "max_nodes": 160}


@dataclass(frozen=True)
class BoundResult:
    """Outcome of one bound at one weight: ``margin = rhs - lhs`` over all samples."""

    bound: str
    rho: float
    samples: int
    failures: int
    worst_margin: float
    worst_relative_margin: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


@dataclass(frozen=True)
class CertificateReport:
    seed: int
    results: tuple = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bound", "rho", "samples", "failures", "worst_margin",
                    "worst_relative_margin", "passed"])
        for r in self.results:
            w.writerow([r.bound, format(r.rho, ".17g"), r.samples, r.failures,
                        format(r.worst_margin, ".17g"), format(r.worst_relative_margin, ".17g"),
                        str(r.passed).lower()])
        return buf.getvalue()

    def to_json(self) -> str:
        body = {
            "seed": self.seed,
            "passed": self.passed,
            "results": [
                {"bound": r.bound, "rho": r.rho, "samples": r.samples, "failures": r.failures,
                 "worst_margin": r.worst_margin,
                 "worst_relative_margin": r.worst_relative_margin, "passed": r.passed}
                for r in self.results
            ],
        }
        return json.dumps(body, sort_keys=True, indent=2) + "\n"


def random_grid_function(rng: np.random.Generator, grid: Grid, d: int) -> GridFunction:
    """A random walk, a smooth oscillation, or spikes, picked at random."""
    n = grid.n
    kind = rng.integers(3)
    if kind == 0:
        vals = np.cumsum(rng.normal(size=(n, d)), axis=0) * math.sqrt(grid.delta)
    elif kind == 1:
        t = (grid.nodes - grid.a)[:, None] / grid.length
        freq = rng.uniform(0.5, 8.0, size=d)
        phase = rng.uniform(0, 2 * math.pi, size=d)
        vals = rng.uniform(0.1, 5.0, size=d) * np.sin(2 * math.pi * freq * t + phase)
    else:
        vals = rng.normal(scale=0.1, size=(n, d))
        spikes = rng.integers(n, size=max(1, n // 10))
        vals[spikes] += rng.normal(scale=10.0, size=(len(spikes), d))
    return GridFunction(grid, vals + rng.normal(size=d))


def _random_grid(rng, max_nodes):
    n = int(rng.integers(8, max(9, max_nodes)))
    a = float(rng.uniform(-2.0, 1.0))
    length = float(rng.uniform(0.1, 5.0))
    return Grid(a, a + length, n)


def _sample(bound: str, rng: np.random.Generator, rho: float, max_nodes: int):
    """Return ``(lhs, rhs)`` for one random instance of ``bound``."""
    d = int(rng.integers(1, 4))
    if bound == "sobolev":
        u = random_grid_function(rng, _random_grid(rng, max_nodes), d)
        lhs, rhs, _ = sobolev_embedding_check(u)
        return lhs, rhs
    if bound == "holder":
        u = random_grid_function(rng, _random_grid(rng, max_nodes), d)
        s, t = rng.uniform(u.grid.a, u.grid.b, size=2)
        lhs = float(np.linalg.norm(eval_at(u, s) - eval_at(u, t)))
        return lhs, math.sqrt(abs(s - t)) * h1_norm(u)
    if bound == "integrate_l2":
        u = random_grid_function(rng, _random_grid(rng, max_nodes), d)
        a = u.grid.a
        return weighted_l2_norm(integrate_rho(u), rho, a), weighted_step_norm(u, rho, a) / rho
    if bound == "integrate_h1":
        u = random_grid_function(rng, _random_grid(rng, max_nodes), d)
        a = u.grid.a
        lhs = weighted_h1_norm(integrate_rho(u), rho, a)
        return lhs, math.sqrt(1.0 + 1.0 / rho ** 2) * weighted_step_norm(u, rho, a)
    if bound == "theta":
        delta = float(rng.uniform(0.01, 0.1))
        m = int(rng.integers(1, max(2, max_nodes // 3)))
        k = int(rng.integers(1, max(2, max_nodes - m)))
        h = m * delta
        u = random_grid_function(rng, Grid(-h, k * delta, m + k + 1), d)
        return theta_norm_estimate(u, rho, h)
    if bound == "eval_lipschitz":
        g = _random_grid(rng, max_nodes)
        alpha = float(rng.uniform(0.1, 10.0))
        slopes = rng.normal(size=(g.n - 1, d))
        norms = np.linalg.norm(slopes, axis=1, keepdims=True)
        slopes *= alpha * rng.uniform(0, 1, size=(g.n - 1, 1)) / np.maximum(norms, 1e-300)
        start = rng.normal(size=(1, d))
        vals = np.vstack([start, start + g.delta * np.cumsum(slopes, axis=0)])
        u = GridFunction(g, vals)
        s, t = rng.uniform(g.a, g.b, size=2)
        lhs = float(np.linalg.norm(eval_at(u, s) - eval_at(u, t)))
        if not eval_lipschitz_check(u, ValphaSpec(alpha, g.length), s, t):
            return lhs, -math.inf
        return lhs, alpha * abs(s - t)
    raise ValueError(f"unknown bound {bound!r}")


def certify_bounds(suite_seed: int = 0, sizes: Optional[Mapping] = None) -> CertificateReport:
    """Check every operator bound on random instances.

    ``sizes`` may set ``samples``, ``rhos``, ``max_nodes`` and ``bounds``;
    missing keys take defaults. An empty mapping is the empty sweep. Each
    (bound, rho) cell draws from its own stream derived from ``suite_seed``,
    so any cell can be rerun in isolation with identical results.
    """
    if sizes is not None and len(sizes) == 0:
        return CertificateReport(int(suite_seed), ())
    cfg = dict(DEFAULT_SIZES)
    if sizes:
        unknown = set(sizes) - set(DEFAULT_SIZES) - {"bounds"}
        if unknown:
            raise ValueError(f"unknown sweep keys {sorted(unknown)}")
        cfg.update(sizes)
    bounds = tuple(cfg.get("bounds", BOUNDS))
    results = []
    for bi, bound in enumerate(BOUNDS):
        if bound not in bounds:
            continue
        for ri, rho in enumerate(cfg["rhos"]):
            rng = np.random.default_rng(np.random.SeedSequence([int(suite_seed), bi, ri]))
            failures = 0
            worst = math.inf
            worst_rel = math.inf
            for _ in range(int(cfg["samples"])):
                lhs, rhs = _sample(bound, rng, float(rho), int(cfg["max_nodes"]))
                margin = rhs - lhs
                if margin < -(ATOL * 1e-3 + RTOL * 1e-3 * abs(rhs)):
                    failures += 1
                worst = min(worst, margin)
                worst_rel = min(worst_rel, margin / max(abs(rhs), 1e-300))
            results.append(BoundResult(bound, float(rho), int(cfg["samples"]), failures,
                                       float(worst), float(worst_rel)))
    return CertificateReport(int(suite_seed), tuple(results))
