"""Right-hand sides ``G(t, phi)`` acting on history segments, with Lipschitz oracles.

A :class:`RhsModel` pairs the evaluation with ``lipschitz_at(alpha)``, a constant
``L_alpha`` such that ``|G(t, phi) - G(t, psi)| <= L_alpha ||phi - psi||_{H1(-h,0)}``
for all ``phi, psi`` in V_alpha. The solver only ever consults this constant to
pick the exponential weight, so it must be an honest upper bound.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DelayOutOfRange, DimensionMismatch, KernelDomain, LagOutOfRange
from .grid_fn import Grid, GridFunction, embedding_constant, eval_at

log = logging.getLogger(__name__)

Vector = np.ndarray


class ClampCounter:
    """Thread-safe count of delay values clamped back into ``[-h, 0]``."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def bump(self):
        with self._lock:
            self._count += 1
            first = self._count == 1
        if first:
            log.warning("state-dependent delay left [-h, 0]; clamping (further cases counted)")

    @property
    def count(self) -> int:
        with self._lock:
            return self._count


@dataclass(frozen=True)
class RhsModel:
    """A right-hand side ``G(t, phi)`` with state dimension ``dim``."""

    eval: Callable[[float, GridFunction], Vector]
    lipschitz_at: Callable[[float], float]
    dim: int = 1
    domain_note: str = ""
    diagnostics: ClampCounter = field(default_factory=ClampCounter, compare=False, repr=False)

    def __call__(self, t: float, phi: GridFunction) -> Vector:
        return np.asarray(self.eval(t, phi), dtype=float).reshape(self.dim)

    def shifted(self, shift: Callable[[float], Vector], note: str = "") -> "RhsModel":
        """``G(t, phi) + shift(t)``; the Lipschitz constant is unchanged."""
        base = self

        def ev(t, phi):
            return base(t, phi) + np.asarray(shift(t), dtype=float).reshape(base.dim)

        return RhsModel(ev, base.lipschitz_at, base.dim,
                        note or f"{base.domain_note} + time-dependent shift")


# ---------------------------------------------------------------------------
# Constant delay


@dataclass(frozen=True)
class ConstantDelaySpec:
    """``G(t, phi) = g(t, [phi(-t_1), ..., phi(-t_n)])`` with ``g`` L-Lipschitz in sum form."""

    h: float
    lags: Sequence[float]
    g: Callable[[float, np.ndarray], Vector]
    g_lipschitz: float
    dim: int = 1


def make_constant_delay(spec: ConstantDelaySpec) -> RhsModel:
    lags = np.asarray(spec.lags, dtype=float)
    if lags.ndim != 1 or len(lags) == 0:
        raise LagOutOfRange("need at least one lag")
    if np.any(lags < 0) or np.any(lags > spec.h * (1 + 1e-12)):
        raise LagOutOfRange(f"lags must lie in [0, {spec.h}], got {list(lags)}")
    if np.any(np.diff(lags) < 0):
        raise LagOutOfRange("lags must be non-decreasing")
    if spec.g_lipschitz < 0:
        raise ValueError("g_lipschitz must be nonnegative")
    lags = np.minimum(lags, spec.h)
    c_ev = embedding_constant(spec.h)
    const = spec.g_lipschitz * len(lags) * max(c_ev, 1.0)

    def ev(t, phi):
        return spec.g(t, eval_at(phi, -lags))

    return RhsModel(ev, lambda alpha: const, spec.dim,
                    f"constant delay, lags {list(map(float, lags))}")


def linear_constant_delay(h: float, lags: Sequence[float], coeffs: Sequence[float],
                          forcing: Optional[Sequence[float]] = None, dim: int = 1) -> RhsModel:
    """``x'(t) = sum_j c_j x(t - t_j) + f``."""
    c = np.asarray(coeffs, dtype=float)
    if len(c) != len(lags):
        raise ValueError("need one coefficient per lag")
    f = np.zeros(dim) if forcing is None else np.asarray(forcing, dtype=float).reshape(dim)

    def g(t, ys):
        return c @ ys + f

    return make_constant_delay(ConstantDelaySpec(h, lags, g, float(np.max(np.abs(c))), dim))


# ---------------------------------------------------------------------------
# State-dependent delay


def make_academic(h: float, d: int = 1) -> RhsModel:
    """``x'(t) = x(t - |x(t)|)`` with the delay clamped into ``[0, h]``.

    Lipschitz constant on V_alpha: ``C + sqrt(h) + alpha C`` with ``C`` the
    embedding constant of ``[-h, 0]``.
    """
    if d != 1:
        raise DimensionMismatch("the academic example is scalar")
    if not h > 0:
        raise ValueError("h must be positive")
    c = embedding_constant(h)

    def ev(t, phi):
        if phi.d != 1:
            raise DimensionMismatch("the academic example is scalar")
        tau = min(abs(float(phi.values[-1, 0])), h)
        return eval_at(phi, -tau)

    return RhsModel(ev, lambda alpha: c + math.sqrt(h) + alpha * c, 1,
                    "academic example x(t - |x(t)|)")


@dataclass(frozen=True)
class StateDelaySpec:
    """``G(t, phi) = g(t, [phi(r_1(phi)), ..., phi(r_m(phi))])``.

    Each ``r_i`` maps a segment into ``[-h, 0]`` and is ``C_i``-Lipschitz with
    respect to the H1 norm; ``g`` is ``L``-Lipschitz in sum form.
    """

    h: float
    delays: Sequence[Callable[[GridFunction], float]]
    delay_lipschitz: Sequence[float]
    g: Callable[[float, np.ndarray], Vector]
    g_lipschitz: float
    dim: int = 1
    strict: bool = False


def make_state_delay(spec: StateDelaySpec) -> RhsModel:
    if len(spec.delays) != len(spec.delay_lipschitz) or not spec.delays:
        raise ValueError("need one Lipschitz constant per delay functional")
    if spec.g_lipschitz < 0 or min(spec.delay_lipschitz) < 0:
        raise ValueError("Lipschitz constants must be nonnegative")
    h = spec.h
    c = embedding_constant(h)
    consts = np.asarray(spec.delay_lipschitz, dtype=float)
    counter = ClampCounter()

    def ev(t, phi):
        r = np.empty(len(spec.delays))
        for i, fn in enumerate(spec.delays):
            ri = float(fn(phi))
            if ri < -h or ri > 0.0:
                if spec.strict:
                    raise DelayOutOfRange(f"delay functional {i} returned {ri}")
                counter.bump()
                ri = min(max(ri, -h), 0.0)
            r[i] = ri
        return spec.g(t, eval_at(phi, r))

    def lip(alpha):
        return spec.g_lipschitz * float(np.sum(c + math.sqrt(h) + alpha * consts))

    return RhsModel(ev, lip, spec.dim, f"state-dependent delay, {len(spec.delays)} functionals",
                    diagnostics=counter)


def linear_state_delay(h: float, offsets: Sequence[float], gains: Sequence[float],
                       coeffs: Sequence[float], dim: int = 1) -> RhsModel:
    """``x'(t) = sum_i c_i x(t - tau_i)`` with ``tau_i = clip(o_i + k_i |x(t)|, 0, h)``."""
    offsets = [float(o) for o in offsets]
    gains = [float(k) for k in gains]
    c = np.asarray(coeffs, dtype=float)
    if not (len(offsets) == len(gains) == len(c)):
        raise ValueError("offsets, gains and coeffs must have equal length")
    c_ev = embedding_constant(h)

    def functional(o, k):
        def r(phi):
            return -min(max(o + k * float(np.linalg.norm(phi.values[-1])), 0.0), h)
        return r

    delays = [functional(o, k) for o, k in zip(offsets, gains)]

    def g(t, ys):
        return c @ ys

    return make_state_delay(StateDelaySpec(h, delays, [abs(k) * c_ev for k in gains], g,
                                           float(np.max(np.abs(c))), dim))


def make_quadratic_zero_lag(h: float) -> RhsModel:
    """``x'(t) = x(t)^2`` (scalar), which blows up in finite time.

    ``x^2`` is not Lipschitz on all of V_alpha, since V_alpha bounds slopes but
    not values. Along a solution that stays in V_alpha, however, ``|x| = |x'|^(1/2)
    <= alpha^(1/2)``, so ``2 alpha^(1/2) C`` bounds the constant on every history
    the solver keeps.
    """
    c = embedding_constant(h)

    def ev(t, phi):
        return phi.values[-1] ** 2

    return RhsModel(ev, lambda alpha: 2.0 * math.sqrt(alpha) * c, 1,
                    "zero-lag quadratic x' = x^2 (constant valid on |x(t)| <= alpha^(1/2))")


# ---------------------------------------------------------------------------
# Integro-differential right-hand sides


@dataclass(frozen=True)
class IntegroDiffSpec:
    """``F(t, phi) + G3(t, phi, int_0^h g(t, phi(-s)) k(t - s) ds)``.

    ``G3`` satisfies ``|G3(t,phi,w) - G3(t,psi,z)| <= L_G (||phi-psi||_H1 + |w-z|)``,
    ``g`` is ``L_g``-Lipschitz in its state argument and ``k`` lives on ``[-h, T]``.
    ``kernel_mode`` is ``"scalar"`` (a 1-component kernel times the vector ``g``)
    or ``"componentwise"`` (a d-component kernel multiplied entry by entry).
    """

    h: float
    F: Optional[RhsModel]
    G3: Callable[[float, GridFunction, Vector], Vector]
    G3_lipschitz: float
    g: Callable[[float, np.ndarray], np.ndarray]
    g_lipschitz: float
    kernel: GridFunction
    kernel_mode: str = "scalar"
    dim: int = 1

    @property
    def kernel_l1(self) -> float:
        return kernel_l1(self.kernel)


def kernel_l1(k: GridFunction) -> float:
    """Cellwise Simpson quadrature of ``|k(t)|`` (midpoints by interpolation)."""
    v = k.values
    mid = 0.5 * (v[:-1] + v[1:])
    nv = np.linalg.norm(v, axis=1)
    nm = np.linalg.norm(mid, axis=1)
    return float(k.grid.delta / 6.0 * np.sum(nv[:-1] + 4.0 * nm + nv[1:]))


def convolution_term(spec: IntegroDiffSpec, t: float, phi: GridFunction) -> Vector:
    """``Q(t, phi) = int_0^h g(t, phi(-s)) k(t - s) ds`` by cellwise Simpson on phi's grid."""
    k = spec.kernel
    slack = 1e-9 * k.grid.delta
    if t - spec.h < k.grid.a - slack or t > k.grid.b + slack:
        raise KernelDomain(f"kernel on [{k.grid.a}, {k.grid.b}] does not cover "
                           f"[{t - spec.h}, {t}]")
    dlt = phi.grid.delta
    x_nodes = phi.values[::-1]  # phi(-s_j), s_j = j * delta
    x_mid = 0.5 * (x_nodes[:-1] + x_nodes[1:])
    s_nodes = dlt * np.arange(phi.grid.n)
    s_mid = s_nodes[:-1] + 0.5 * dlt
    lo, hi = k.grid.a, k.grid.b
    k_nodes = eval_at(k, np.clip(t - s_nodes, lo, hi))
    k_mid = eval_at(k, np.clip(t - s_mid, lo, hi))
    g_nodes = np.asarray(spec.g(t, x_nodes), dtype=float).reshape(x_nodes.shape)
    g_mid = np.asarray(spec.g(t, x_mid), dtype=float).reshape(x_mid.shape)
    if spec.kernel_mode == "scalar":
        f_nodes = g_nodes * k_nodes[:, :1]
        f_mid = g_mid * k_mid[:, :1]
    else:
        f_nodes = g_nodes * k_nodes
        f_mid = g_mid * k_mid
    return dlt / 6.0 * (f_nodes[:-1] + 4.0 * f_mid + f_nodes[1:]).sum(axis=0)


def make_integro(spec: IntegroDiffSpec) -> RhsModel:
    if spec.kernel_mode not in ("scalar", "componentwise"):
        raise ValueError(f"unknown kernel_mode {spec.kernel_mode!r}")
    if spec.kernel_mode == "scalar" and spec.kernel.d != 1:
        raise DimensionMismatch("scalar kernel mode needs a 1-component kernel")
    if spec.kernel_mode == "componentwise" and spec.kernel.d != spec.dim:
        raise DimensionMismatch("componentwise kernel mode needs a d-component kernel")
    if spec.F is not None and spec.F.dim != spec.dim:
        raise DimensionMismatch("F has the wrong state dimension")
    c = embedding_constant(spec.h)
    l1 = spec.kernel_l1
    chain = spec.G3_lipschitz * (1.0 + spec.g_lipschitz * c * l1)
    F = spec.F

    def ev(t, phi):
        q = convolution_term(spec, t, phi)
        out = np.asarray(spec.G3(t, phi, q), dtype=float).reshape(spec.dim)
        if F is not None:
            out = out + F(t, phi)
        return out

    def lip(alpha):
        return (F.lipschitz_at(alpha) if F is not None else 0.0) + chain

    return RhsModel(ev, lip, spec.dim, f"integro-differential, {spec.kernel_mode} kernel")


def exp_kernel(h: float, T: float, delta: float, rate: float = 1.0, scale: float = 1.0,
               dim: int = 1) -> GridFunction:
    """``k(t) = scale * exp(-rate t)`` sampled on ``[-h, T]``."""
    grid = Grid.from_spacing(-h, T, delta)
    vals = scale * np.exp(-rate * grid.nodes)
    return GridFunction(grid, np.tile(vals[:, None], (1, dim)))


def linear_integro(h: float, T: float, delta: float, f_gain: float, g3_gain: float,
                   g_gain: float, kernel: GridFunction, kernel_mode: str = "scalar",
                   dim: int = 1) -> RhsModel:
    """``x' = a x(t) + b int_0^h c x(t - s) k(t - s) ds``."""
    F = linear_constant_delay(h, [0.0], [f_gain], dim=dim) if f_gain != 0.0 else None

    def G3(t, phi, w):
        return g3_gain * w

    def g(t, x):
        return g_gain * x

    return make_integro(IntegroDiffSpec(h, F, G3, abs(g3_gain), g, abs(g_gain), kernel,
                                        kernel_mode, dim))
