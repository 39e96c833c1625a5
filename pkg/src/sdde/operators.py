"""Integration, history and evaluation operators, and the metric projection onto V_alpha."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import NotInValpha, OutOfDomain
from .grid_fn import (ATOL, RTOL, Grid, GridFunction, _cell_weights, _linear_sq_integrals,
                      deriv_sup_norm, eval_at, weighted_h1_norm)

log = logging.getLogger(__name__)

# Relative slack when deciding membership in V_alpha.
VALPHA_RTOL = 1e-12


@dataclass(frozen=True)
class HistorySegment(GridFunction):
    """The segment ``s -> u(t + s)`` on ``[-h, 0]``, cut from ``u`` at ``source_time``."""

    source_time: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if self.grid.b != 0.0 or not self.grid.a < 0.0:
            raise ValueError("history segments live on [-h, 0]")

    @property
    def h(self) -> float:
        return -self.grid.a

    @classmethod
    def _trusted(cls, grid: Grid, values: np.ndarray, source_time: float = 0.0):
        obj = object.__new__(cls)
        object.__setattr__(obj, "grid", grid)
        object.__setattr__(obj, "values", values)
        object.__setattr__(obj, "source_time", source_time)
        return obj


@dataclass(frozen=True)
class ValphaSpec:
    """Derivative bound ``alpha`` and delay horizon ``h`` describing V_alpha."""

    alpha: float
    h: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")


def in_valpha(u: GridFunction, alpha: float) -> bool:
    return deriv_sup_norm(u) <= alpha * (1.0 + VALPHA_RTOL)


# ---------------------------------------------------------------------------
# I_rho and its inverse


def integrate_rho(u: GridFunction, rho: float | None = None) -> GridFunction:
    """Antiderivative ``t -> int_a^t u`` of the step function with value ``u(t_i)`` on cell i.

    The result is piecewise linear, vanishes at ``a`` and its cell slopes are
    exactly ``u(t_0), ..., u(t_{n-2})``. The map does not depend on ``rho``;
    the weight only enters the norms it is measured in.
    """
    del rho
    g = u.grid
    out = np.zeros_like(u.values)
    out[1:] = g.delta * np.cumsum(u.values[:-1], axis=0)
    return GridFunction(g, out)


def discrete_derivative(u: GridFunction) -> GridFunction:
    """Cell slopes placed on the left node of each cell; the last node repeats the last cell."""
    s = u.slopes
    return GridFunction(u.grid, np.vstack([s, s[-1:]]))


# ---------------------------------------------------------------------------
# The history map


def _history_grid(u: GridFunction, h: float) -> tuple[Grid, int]:
    g = u.grid
    if abs(g.a + h) > 1e-9 * max(1.0, h):
        raise ValueError(f"trajectory must start at -h={-h}, starts at {g.a}")
    m = h / g.delta
    mi = round(m)
    if mi < 1 or abs(m - mi) > 1e-9 * max(1.0, m):
        raise ValueError(f"grid spacing {g.delta} does not divide h={h}")
    return Grid(-h, 0.0, mi + 1), mi


def history_at(u: GridFunction, t: float, h: float) -> HistorySegment:
    """The segment ``u_t: s -> u(t + s)`` on ``[-h, 0]`` for ``u`` defined on ``[-h, T]``."""
    seg_grid, m = _history_grid(u, h)
    T = u.grid.b
    if t < -1e-12 * u.grid.delta or t > T + 1e-12 * u.grid.delta:
        raise OutOfDomain(f"history time t={t} outside [0, {T}]")
    k = u.grid.index_of(t)
    if k is not None:
        vals = u.values[k - m:k + 1]
    else:
        vals = eval_at(u, np.clip(t + seg_grid.nodes, u.grid.a, u.grid.b))
    return HistorySegment(seg_grid, vals, source_time=float(t))


def _node_history_h1_sq(u: GridFunction, m: int) -> np.ndarray:
    """``||u_{t_k}||^2_{H1(-h,0)}`` for every node ``t_k >= 0``, via prefix sums over cells."""
    cells = _linear_sq_integrals(u, 0.0, 0.0) + u.grid.delta * np.einsum(
        "ij,ij->i", u.slopes, u.slopes)
    prefix = np.concatenate([[0.0], np.cumsum(cells)])
    k = np.arange(m, u.grid.n)
    return np.maximum(prefix[k] - prefix[k - m], 0.0)


def theta_norm_estimate(u: GridFunction, rho: float, h: float) -> tuple[float, float]:
    """Both sides of ``||Theta u||_{L2,rho(0,T;H1(-h,0))} <= (2 rho)^(-1/2) ||u||_{H1_rho}``.

    The left side samples ``t -> ||u_t||^2_{H1}`` at the nodes of ``[0, T]`` and
    integrates its piecewise-linear interpolant against ``exp(-2 rho t)`` exactly.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    _, m = _history_grid(u, h)
    n_sq = _node_history_h1_sq(u, m)
    T = u.grid.b
    if len(n_sq) < 2:
        lhs = 0.0
    else:
        tgrid = Grid(u.nodes[m], T, len(n_sq))
        scale, f0, f1, _ = _cell_weights(tgrid, rho, 0.0)
        lhs_sq = np.sum(scale * (n_sq[:-1] * f0 + np.diff(n_sq) * f1))
        lhs = math.sqrt(max(float(lhs_sq), 0.0))
    rhs = weighted_h1_norm(u, rho) / math.sqrt(2.0 * rho)
    return lhs, rhs


# ---------------------------------------------------------------------------
# Evaluation on V_alpha


def eval_lipschitz_check(u: GridFunction, spec: ValphaSpec, s: float, t: float) -> bool:
    """Check ``|u(s) - u(t)| <= alpha |s - t|`` for a member of V_alpha."""
    ds = deriv_sup_norm(u)
    if ds > spec.alpha * (1.0 + RTOL) + ATOL:
        raise NotInValpha(f"derivative sup {ds} exceeds alpha={spec.alpha}")
    lhs = float(np.linalg.norm(eval_at(u, s) - eval_at(u, t)))
    rhs = spec.alpha * abs(s - t)
    return lhs <= rhs + ATOL + RTOL * rhs


# ---------------------------------------------------------------------------
# Metric projection onto V_alpha in the discrete H1 inner product


def trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def discrete_h1_inner(u: GridFunction, w: GridFunction) -> float:
    """Trapezoid-weighted nodal products plus cell-slope products, both times delta."""
    dlt = u.grid.delta
    tw = trapezoid_weights(u.grid.n)
    val = dlt * np.sum(tw * np.einsum("ij,ij->i", u.values, w.values))
    der = dlt * np.sum(np.einsum("ij,ij->i", u.slopes, w.slopes))
    return float(val + der)


def discrete_h1_norm(u: GridFunction) -> float:
    return math.sqrt(max(discrete_h1_inner(u, u), 0.0))


def _clamp_rows(s: np.ndarray, radius: float) -> np.ndarray:
    norms = np.linalg.norm(s, axis=1)
    factor = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    return s * factor[:, None]


def project_valpha(phi: GridFunction, spec: ValphaSpec, tol: float = 1e-12,
                   max_iter: int = 50_000) -> GridFunction:
    """Nearest point of V_alpha to ``phi`` in the discrete H1 norm.

    Returns ``phi`` itself when it already satisfies the slope bound. Otherwise
    runs accelerated projected gradient in the coordinates ``(psi(t_0), slopes)``,
    where the constraint set is a product of Euclidean balls and the projection
    is a radial clamp per cell.
    """
    if in_valpha(phi, spec.alpha):
        return phi
    g = phi.grid
    dlt = g.delta
    h = g.length
    alpha = spec.alpha
    target = phi.values
    sigma = phi.slopes
    tw = trapezoid_weights(g.n)[:, None]
    # Gradient-Lipschitz bound in the metric diag(h, delta): 2 (2 + h^2).
    lip = 2.0 * (2.0 + h * h)
    step_p = 1.0 / (lip * h)
    step_s = 1.0 / (lip * dlt)
    scale = max(1.0, math.sqrt(h * float(np.sum(target[0] ** 2))
                               + dlt * float(np.sum(sigma ** 2))))

    def nodes_of(p, s):
        psi = np.empty_like(target)
        psi[0] = p
        psi[1:] = p + dlt * np.cumsum(s, axis=0)
        return psi

    def grad(p, s):
        r = 2.0 * dlt * tw * (nodes_of(p, s) - target)
        tail = np.cumsum(r[::-1], axis=0)[::-1]
        return r.sum(axis=0), 2.0 * dlt * (s - sigma) + dlt * tail[1:]

    p = target[0].copy()
    s = _clamp_rows(sigma, alpha)
    yp, ys = p.copy(), s.copy()
    mom = 1.0
    for it in range(max_iter):
        gp, gs = grad(yp, ys)
        p_new = yp - step_p * gp
        s_new = _clamp_rows(ys - step_s * gs, alpha)
        dp, ds = p_new - yp, s_new - ys
        moved = math.sqrt(h * float(np.sum(dp ** 2)) + dlt * float(np.sum(ds ** 2)))
        if moved <= tol * scale:
            p, s = p_new, s_new
            break
        # Gradient-based adaptive restart keeps the iteration monotone near the optimum.
        if float(np.sum(gp * (p_new - p))) + float(np.sum(gs * (s_new - s))) > 0:
            p, s, mom = p_new, s_new, 1.0
            yp, ys = p.copy(), s.copy()
            continue
        mom_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * mom * mom))
        beta = (mom - 1.0) / mom_new
        yp = p_new + beta * (p_new - p)
        ys = s_new + beta * (s_new - s)
        p, s, mom = p_new, s_new, mom_new
    else:
        log.warning("project_valpha: no stationarity after %d iterations", max_iter)
    return GridFunction(g, nodes_of(p, s))
