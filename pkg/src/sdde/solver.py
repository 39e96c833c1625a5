"""Picard iteration for ``v = Gamma_alpha v`` in H1_rho, with alpha-doubling continuation.

The unknown is the increment ``v = u - Phi_hat`` which vanishes on ``[-h, 0]``.
One application of :func:`gamma_step` evaluates the right-hand side on the
projected histories of ``v + Phi_hat`` at every node of ``[0, T]`` and
integrates the result. Because :func:`sdde.operators.integrate_rho` is causal,
the value at ``t_{i+1}`` depends on the iterate only up to ``t_i``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, NoConvergence, NotInValpha, RhoOverflow, StageInconsistency
from .grid_fn import Grid, GridFunction, Prehistory, restrict, weighted_h1_norm, write_csv
from .operators import HistorySegment, ValphaSpec, _history_grid, history_at, project_valpha
from .rhs import RhsModel

log = logging.getLogger(__name__)

GLOBAL = "Global"
BLOW_UP = "BlowUp"
BUDGET = "BudgetExhausted"
STATUSES = (GLOBAL, BLOW_UP, BUDGET)

# Slack used when comparing slopes or rhs values against alpha.
ALPHA_RTOL = 1e-9
ALPHA_ATOL = 1e-12
STAGE_TOL = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    """Discretization and iteration parameters.

    ``alpha1 = None`` picks ``max(1, 2 * deriv_sup(Phi))`` at solve time.
    With ``clip_rhs`` the integrated rhs values are clipped to the ball of
    radius alpha; this only changes the iterate beyond the reported horizon.
    """

    delta: float = 1e-3
    theta: float = 0.7
    fp_tol: float = 1e-10
    max_iters: int = 200
    alpha1: Optional[float] = None
    alpha_max: float = 1e8
    rho_max: float = 1e15
    max_stages: int = 60
    clip_rhs: bool = True

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if not self.fp_tol > 0:
            raise ValueError("fp_tol must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        if self.alpha1 is not None and not self.alpha1 > 0:
            raise ValueError("alpha1 must be positive")
        if not self.alpha_max > 0 or not self.rho_max >= 1:
            raise ValueError("alpha_max must be positive and rho_max >= 1")
        if int(self.max_stages) != self.max_stages or self.max_stages < 1:
            raise ValueError("max_stages must be a positive integer")

    def initial_alpha(self, phi: Prehistory) -> float:
        if self.alpha1 is not None:
            return float(self.alpha1)
        return max(1.0, 2.0 * phi.deriv_sup)


@dataclass(frozen=True)
class ExtendedPrehistory:
    """``Phi`` on ``[-h, 0]`` continued by the constant ``Phi(0)`` on ``[0, T]``."""

    fn: GridFunction
    h: float

    @property
    def m(self) -> int:
        """Index of the node ``t = 0``."""
        return _history_grid(self.fn, self.h)[1]


def extend_prehistory(phi: Prehistory, T: float, delta: Optional[float] = None) -> ExtendedPrehistory:
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    delta = phi.grid.delta if delta is None else delta
    _check_spacing(phi, delta)
    h = phi.h
    grid = Grid.from_spacing(-h, T, delta)
    m = phi.grid.n - 1
    vals = np.empty((grid.n, phi.d))
    vals[:m + 1] = phi.fn.values
    vals[m + 1:] = phi.fn.values[-1]
    return ExtendedPrehistory(GridFunction(grid, vals), h)


def _check_spacing(phi: Prehistory, delta: float):
    if abs(phi.grid.delta - delta) > 1e-9 * delta:
        raise ValueError(f"prehistory spacing {phi.grid.delta} differs from solver delta {delta}")


# ---------------------------------------------------------------------------
# Weight selection


def contraction_factor(lip: float, rho: float) -> float:
    """``(1 + 1/rho^2)^(1/2) L (2 rho)^(-1/2)``."""
    return math.sqrt(1.0 + 1.0 / rho ** 2) * lip / math.sqrt(2.0 * rho)


def select_rho(lip: float, theta: float, rho_max: float = 1e15) -> float:
    """Smallest ``rho >= 1`` with ``(1 + 1/rho^2) L^2 / (2 rho) <= theta^2``, up to 1e-10."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if lip < 0 or not math.isfinite(lip):
        raise ValueError(f"Lipschitz constant must be finite and nonnegative, got {lip}")
    target = theta * theta

    def ok(r):
        return (1.0 + 1.0 / (r * r)) * lip * lip / (2.0 * r) <= target

    if ok(1.0):
        return 1.0
    lo, hi = 1.0, 2.0
    while not ok(hi):
        lo, hi = hi, 2.0 * hi
        if lo > rho_max:
            raise RhoOverflow(f"L={lip:g} needs rho > rho_max={rho_max:g}")
    while hi - lo > 1e-10 * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    if hi > rho_max:
        raise RhoOverflow(f"L={lip:g} needs rho={hi:g} > rho_max={rho_max:g}")
    return hi


# ---------------------------------------------------------------------------
# The map Gamma_alpha


def _rhs_on_histories(u: np.ndarray, grid: Grid, m: int, G: RhsModel, alpha: float,
                      h: float) -> np.ndarray:
    """``G(t_i, pi_alpha(u_{t_i}))`` for every node ``t_i >= 0``; shape ``(n - m, d)``."""
    seg_grid = Grid(-h, 0.0, m + 1)
    spec = ValphaSpec(alpha, h)
    slope_norm = np.linalg.norm(np.diff(u, axis=0), axis=1) / grid.delta
    win_max = np.lib.stride_tricks.sliding_window_view(slope_norm, m).max(axis=1)
    inside = win_max <= alpha * (1.0 + ALPHA_RTOL) + ALPHA_ATOL
    u = u.copy()
    u.flags.writeable = False
    nodes = grid.nodes
    out = np.empty((grid.n - m, u.shape[1]))
    for k in range(grid.n - m):
        i = k + m
        seg = HistorySegment._trusted(seg_grid, u[i - m:i + 1], float(nodes[i]))
        if not inside[k]:
            seg = project_valpha(seg, spec)
        out[k] = G(float(nodes[i]), seg)
    return out


def _clip_ball(w: np.ndarray, radius: float) -> np.ndarray:
    norms = np.linalg.norm(w, axis=1)
    factor = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    return w * factor[:, None]


def _gamma(v: np.ndarray, phi_hat: ExtendedPrehistory, G: RhsModel, alpha: float,
           clip: bool) -> tuple[np.ndarray, np.ndarray]:
    grid = phi_hat.fn.grid
    m = phi_hat.m
    raw = _rhs_on_histories(v + phi_hat.fn.values, grid, m, G, alpha, phi_hat.h)
    w = _clip_ball(raw, alpha) if clip else raw
    out = np.zeros_like(v)
    out[m + 1:] = grid.delta * np.cumsum(w[:-1], axis=0)
    return out, raw


def gamma_step(v: GridFunction, phi_hat: ExtendedPrehistory, G: RhsModel, alpha: float,
               rho: Optional[float] = None, clip: bool = False) -> GridFunction:
    """``I_rho G(., pi_alpha((v + Phi_hat)_.))`` on ``[0, T]``, extended by zero to ``[-h, 0]``.

    ``rho`` is accepted for symmetry with the analysis; the map itself does not
    depend on it.
    """
    del rho
    if v.grid != phi_hat.fn.grid:
        raise ValueError("v and Phi_hat must share a grid")
    m = phi_hat.m
    if np.any(v.values[:m + 1] != 0.0):
        raise ValueError("v must vanish on [-h, 0]")
    out, _ = _gamma(v.values, phi_hat, G, alpha, clip)
    return GridFunction(v.grid, out)


# ---------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class SolutionRecord:
    """Outcome of a local or global solve.

    ``trajectory`` lives on ``[-h, T0]``. Per-stage lists are ordered by stage.
    ``measured_contraction`` is the largest ratio of successive Picard
    increments (NaN when every increment was below resolution).
    """

    trajectory: GridFunction
    status: str
    T0: float
    alphas_used: tuple
    rho_used: tuple
    measured_contraction: tuple
    residual: float
    theoretical_contraction: tuple = ()
    iterations: tuple = ()
    stage_times: tuple = ()
    stage_mismatch: tuple = ()
    T: float = float("nan")
    h: float = float("nan")
    delta: float = float("nan")

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    def metadata(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "trajectory":
                continue
            out[f.name] = _jsonable(getattr(self, f.name))
        return out

    def to_json(self) -> str:
        return json.dumps(self.metadata(), sort_keys=True, indent=2) + "\n"

    def write(self, trajectory_path, metadata_path):
        """Write the trajectory CSV and the JSON sidecar atomically."""
        atomic_write_text(trajectory_path, write_csv(self.trajectory))
        atomic_write_text(metadata_path, self.to_json())


def _jsonable(x):
    if isinstance(x, (list, tuple)):
        return [_jsonable(y) for y in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Local solve


@dataclass(frozen=True)
class _Stage:
    u: GridFunction  # full iterate on [-h, T]
    alpha: float
    T1: float
    i1: int
    rho: float
    ratio: float
    theory: float
    iters: int
    converged: bool


def _horizon(raw: np.ndarray, m: int, nodes: np.ndarray, alpha: float) -> int:
    """Index of the first node ``t_j`` whose rhs value exceeds alpha (``n - 1`` if none)."""
    bad = np.linalg.norm(raw, axis=1) > alpha * (1.0 + ALPHA_RTOL) + ALPHA_ATOL
    # The value at the last node is never integrated.
    bad[-1] = False
    idx = np.flatnonzero(bad)
    return int(idx[0] + m) if len(idx) else len(nodes) - 1


def _run_stage(phi: Prehistory, G: RhsModel, T: float, alpha: float, cfg: SolverConfig,
               v0: Optional[GridFunction] = None) -> _Stage:
    _check_spacing(phi, cfg.delta)
    if G.dim != phi.d:
        raise DimensionMismatch(f"rhs has dimension {G.dim}, prehistory {phi.d}")
    if phi.deriv_sup > alpha * (1.0 + ALPHA_RTOL) + ALPHA_ATOL:
        raise NotInValpha(f"prehistory slope bound {phi.deriv_sup} exceeds alpha={alpha}")
    lip = float(G.lipschitz_at(alpha))
    rho = select_rho(lip, cfg.theta, cfg.rho_max)
    theory = contraction_factor(lip, rho)
    phi_hat = extend_prehistory(phi, T, cfg.delta)
    grid = phi_hat.fn.grid
    m = phi_hat.m
    nodes = grid.nodes
    # Iterates vanish on [-h, 0], so their H1_rho norms only see [0, T].
    tail = Grid(0.0, T, grid.n - m)

    if v0 is None:
        v = np.zeros_like(phi_hat.fn.values)
    else:
        if v0.grid != grid or np.any(v0.values[:m + 1] != 0.0):
            raise ValueError("initial iterate must live on [-h, T] and vanish on [-h, 0]")
        v = np.array(v0.values)

    prev = None
    ratio = float("nan")
    converged = False
    raw = None
    it = 0
    for it in range(1, cfg.max_iters + 1):
        new, raw = _gamma(v, phi_hat, G, alpha, cfg.clip_rhs)
        diff = new - v
        dn = weighted_h1_norm(GridFunction._trusted(tail, diff[m:]), rho)
        vn = weighted_h1_norm(GridFunction._trusted(tail, new[m:]), rho)
        floor = 1e-13 * max(1.0, vn)
        if prev is not None and prev > floor and math.isfinite(dn):
            r = dn / prev
            ratio = r if math.isnan(ratio) else max(ratio, r)
        prev = dn
        v = new
        node_ok = np.all(np.abs(diff) <= cfg.fp_tol * np.maximum(1.0, np.abs(new)))
        if dn <= cfg.fp_tol * max(1.0, vn) and node_ok:
            converged = True
            break
    # Horizon of the converged iterate.
    raw = _rhs_on_histories(v + phi_hat.fn.values, grid, m, G, alpha, phi_hat.h)
    i1 = _horizon(raw, m, nodes, alpha)
    u = GridFunction(grid, v + phi_hat.fn.values)
    if not converged:
        if not math.isnan(ratio) and ratio >= 1.0:
            raise NoConvergence(f"Picard iteration diverging (ratio {ratio:.3g}) at alpha={alpha:g}; "
                                "is the Lipschitz constant an upper bound?")
        log.warning("no convergence within %d iterations at alpha=%g", cfg.max_iters, alpha)
    return _Stage(u, alpha, float(nodes[i1]), i1, rho, ratio, theory, it, converged)


def _record_from(stage_list, status, G, phi, T, cfg, mismatch=()):
    last = stage_list[-1]
    traj = restrict(last.u, -phi.h, last.T1) if last.i1 > 0 else last.u
    rec = SolutionRecord(
        trajectory=traj, status=status, T0=last.T1,
        alphas_used=tuple(s.alpha for s in stage_list),
        rho_used=tuple(s.rho for s in stage_list),
        measured_contraction=tuple(s.ratio for s in stage_list),
        residual=0.0,
        theoretical_contraction=tuple(s.theory for s in stage_list),
        iterations=tuple(s.iters for s in stage_list),
        stage_times=tuple(s.T1 for s in stage_list),
        stage_mismatch=tuple(mismatch), T=float(T), h=phi.h, delta=cfg.delta)
    return _with_residual(rec, G)


def _with_residual(rec: SolutionRecord, G: RhsModel) -> SolutionRecord:
    return replace(rec, residual=residual(rec, G))


def solve_local(phi: Prehistory, G: RhsModel, T: float, alpha: float,
                cfg: SolverConfig = SolverConfig(), v0: Optional[GridFunction] = None
                ) -> SolutionRecord:
    """One Picard solve at derivative bound ``alpha``.

    The reported horizon ``T0`` is the last node up to which the computed
    solution has slopes at most ``alpha``; the status is ``Global`` when that
    is ``T`` and ``BudgetExhausted`` otherwise.
    """
    s = _run_stage(phi, G, T, alpha, cfg, v0)
    status = GLOBAL if s.i1 == s.u.grid.n - 1 else BUDGET
    if not s.converged:
        status = BUDGET
    return _record_from([s], status, G, phi, T, cfg)


def solve_global(phi: Prehistory, G: RhsModel, T: float,
                 cfg: SolverConfig = SolverConfig()) -> SolutionRecord:
    """Continuation with ``alpha_n = 2^(n-1) alpha_1`` until ``T`` is reached or the horizon stalls.

    Successive stages must agree on the previously reached interval. Blow-up is
    declared once the horizon advanced by at most one cell over three
    consecutive doublings and alpha has reached ``alpha_max``.
    """
    alpha = cfg.initial_alpha(phi)
    if not alpha > phi.deriv_sup:
        raise NotInValpha(f"alpha1={alpha} must exceed the prehistory slope bound {phi.deriv_sup}")
    stages: list[_Stage] = []
    mismatch: list[float] = []
    stall = 0
    for n in range(cfg.max_stages):
        s = _run_stage(phi, G, T, alpha, cfg)
        if stages:
            prev = stages[-1]
            a = prev.u.values[:prev.i1 + 1]
            b = s.u.values[:prev.i1 + 1]
            gap = float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))
            mismatch.append(gap)
            if gap > STAGE_TOL:
                raise StageInconsistency(
                    f"stage {n + 1} (alpha={alpha:g}) differs from stage {n} by {gap:.3g} "
                    f"on [-h, {prev.T1:g}]")
            if s.i1 <= prev.i1 + 1:
                stall += 1
            else:
                stall = 0
        stages.append(s)
        if not s.converged:
            return _record_from(stages, BUDGET, G, phi, T, cfg, mismatch)
        if s.i1 == s.u.grid.n - 1:
            return _record_from(stages, GLOBAL, G, phi, T, cfg, mismatch)
        if alpha >= cfg.alpha_max:
            status = BLOW_UP if stall >= 3 else BUDGET
            return _record_from(stages, status, G, phi, T, cfg, mismatch)
        alpha *= 2.0
    return _record_from(stages, BUDGET, G, phi, T, cfg, mismatch)


# ---------------------------------------------------------------------------
# Defect


def residual(rec: SolutionRecord, G: RhsModel) -> float:
    """Largest nodal defect ``|u'(t_i) - G(t_i, u_{t_i})|`` over interior nodes of ``(0, T0)``.

    Both one-sided cell slopes at ``t_i`` are compared against ``G`` on the
    unprojected history.
    """
    u = rec.trajectory
    h = -u.grid.a
    _, m = _history_grid(u, h)
    n = u.grid.n
    if n - 1 - m < 2:
        return 0.0
    slopes = u.slopes
    nodes = u.nodes
    worst = 0.0
    for i in range(m + 1, n - 1):
        g = G(float(nodes[i]), history_at(u, float(nodes[i]), h))
        worst = max(worst, float(np.linalg.norm(slopes[i] - g)),
                    float(np.linalg.norm(slopes[i - 1] - g)))
    return worst
