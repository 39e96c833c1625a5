"""Piecewise-linear functions on uniform grids and their (weighted) norms.

A :class:`GridFunction` stores nodal values of a continuous, piecewise-linear
function ``u: [a, b] -> R^d``. Its weak derivative is the piecewise-constant
function of cell slopes. All weighted integrals against ``exp(-2 rho t)`` are
evaluated cell by cell in closed form, so norms carry no quadrature error.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Union

import numpy as np

from .errors import OutOfDomain

# Absolute and relative slack for boolean bound checks.
ATOL = 1e-9
RTOL = 1e-9

_SERIES_CUTOFF = 1.0
_SERIES_TERMS = 30


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``t_i = a + i * delta`` for ``i = 0, ..., n - 1``."""

    a: float
    b: float
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("grid endpoints must be finite")
        if not self.a < self.b:
            raise ValueError(f"need a < b, got a={self.a}, b={self.b}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"need an integer node count n >= 2, got {self.n}")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "n", int(self.n))

    @property
    def delta(self) -> float:
        return (self.b - self.a) / (self.n - 1)

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def nodes(self) -> np.ndarray:
        t = self.a + np.arange(self.n) * self.delta
        t[-1] = self.b
        return t

    @classmethod
    def from_spacing(cls, a: float, b: float, delta: float) -> "Grid":
        """Grid on ``[a, b]`` with spacing ``delta``; ``delta`` must divide ``b - a``."""
        cells = (b - a) / delta
        k = round(cells)
        if k < 1 or abs(cells - k) > 1e-9 * max(1.0, cells):
            raise ValueError(f"spacing {delta} does not divide [{a}, {b}]")
        return cls(a, b, k + 1)

    def index_of(self, t: float, tol: float = 1e-9) -> int | None:
        """Index of the node equal to ``t`` (within ``tol * delta``), else None."""
        x = (t - self.a) / self.delta
        i = round(x)
        if 0 <= i < self.n and abs(x - i) <= tol:
            return int(i)
        return None


@dataclass(frozen=True)
class GridFunction:
    """Nodal values of a piecewise-linear ``R^d``-valued function.

    ``values`` has shape ``(n, d)``; a 1-D array is read as ``d = 1``.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n:
            raise ValueError(
                f"values must have shape ({self.grid.n}, d), got {np.shape(self.values)}")
        if v.shape[1] < 1:
            raise ValueError("state dimension must be positive")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def _trusted(cls, grid: Grid, values: np.ndarray) -> "GridFunction":
        # Hot-path constructor: caller guarantees shape (n, d) and finiteness.
        obj = object.__new__(cls)
        object.__setattr__(obj, "grid", grid)
        object.__setattr__(obj, "values", values)
        return obj

    @classmethod
    def from_callable(cls, grid: Grid, f) -> "GridFunction":
        """Sample ``f`` at the nodes; ``f`` maps an array of times to ``(n,)`` or ``(n, d)``."""
        return cls(grid, np.asarray(f(grid.nodes), dtype=float))

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def slopes(self) -> np.ndarray:
        """Cell slopes, shape ``(n - 1, d)``: the piecewise-constant weak derivative."""
        return np.diff(self.values, axis=0) / self.grid.delta

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction(self.grid, -self.values)


@dataclass(frozen=True)
class Prehistory:
    """Initial datum on ``[-h, 0]`` with a finite derivative sup-norm."""

    fn: GridFunction
    deriv_sup: float = field(init=False)

    def __post_init__(self):
        if self.fn.grid.b != 0.0 or not self.fn.grid.a < 0.0:
            raise ValueError(
                f"prehistory must live on [-h, 0], got [{self.fn.grid.a}, {self.fn.grid.b}]")
        object.__setattr__(self, "deriv_sup", deriv_sup_norm(self.fn))

    @property
    def h(self) -> float:
        return -self.fn.grid.a

    @property
    def grid(self) -> Grid:
        return self.fn.grid

    @property
    def d(self) -> int:
        return self.fn.d

    @classmethod
    def from_callable(cls, h: float, delta: float, f) -> "Prehistory":
        return cls(GridFunction.from_callable(Grid.from_spacing(-h, 0.0, delta), f))

    @classmethod
    def constant(cls, h: float, delta: float, c) -> "Prehistory":
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return cls.from_callable(h, delta, lambda t: np.tile(c, (len(t), 1)))


def _check_same_grid(u: GridFunction, w: GridFunction):
    if u.grid != w.grid:
        raise ValueError("grid functions live on different grids")
    if u.d != w.d:
        raise ValueError(f"state dimensions differ: {u.d} vs {w.d}")


# ---------------------------------------------------------------------------
# Exact cell integrals of p(t) exp(-2 rho t) for polynomials of degree <= 2.


def _unit_moments(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``f_k(x) = int_0^1 s^k exp(-x s) ds`` for ``k = 0, 1, 2``, ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    f0 = np.empty_like(x)
    f1 = np.empty_like(x)
    f2 = np.empty_like(x)
    small = x < _SERIES_CUTOFF
    if np.any(small):
        xs = x[small]
        term = np.ones_like(xs)
        s0 = np.zeros_like(xs)
        s1 = np.zeros_like(xs)
        s2 = np.zeros_like(xs)
        # f_k(x) = sum_j (-x)^j / (j! (k + j + 1))
        for j in range(_SERIES_TERMS):
            s0 += term / (j + 1)
            s1 += term / (j + 2)
            s2 += term / (j + 3)
            term = term * (-xs) / (j + 1)
        f0[small] = s0
        f1[small] = s1
        f2[small] = s2
    big = ~small
    if np.any(big):
        xb = x[big]
        e = np.exp(-xb)
        g0 = -np.expm1(-xb) / xb
        g1 = (g0 - e) / xb
        f0[big] = g0
        f1[big] = g1
        f2[big] = (2.0 * g1 - e) / xb
    return f0, f1, f2


def _cell_weights(grid: Grid, rho: float, origin: float):
    """Per-cell factors ``exp(-2 rho (t_i - origin)) * delta`` and unit moments."""
    if rho < 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")
    delta = grid.delta
    left = grid.nodes[:-1]
    beta = 2.0 * rho
    scale = np.exp(-beta * (left - origin)) * delta if rho > 0 else np.full(len(left), delta)
    f0, f1, f2 = _unit_moments(np.full(len(left), beta * delta))
    return scale, f0, f1, f2


def _linear_sq_integrals(u: GridFunction, rho: float, origin: float) -> np.ndarray:
    """Per-cell ``int |u(t)|^2 exp(-2 rho (t - origin)) dt`` for piecewise-linear u."""
    scale, f0, f1, f2 = _cell_weights(u.grid, rho, origin)
    u0 = u.values[:-1]
    du = np.diff(u.values, axis=0)
    a = np.einsum("ij,ij->i", u0, u0)
    b = np.einsum("ij,ij->i", u0, du)
    c = np.einsum("ij,ij->i", du, du)
    return np.maximum(scale * (a * f0 + 2.0 * b * f1 + c * f2), 0.0)


def _step_sq_integrals(cell_values: np.ndarray, grid: Grid, rho: float, origin: float):
    """Per-cell ``int |c_i|^2 exp(-2 rho (t - origin)) dt`` for a step function."""
    scale, f0, _, _ = _cell_weights(grid, rho, origin)
    return scale * f0 * np.einsum("ij,ij->i", cell_values, cell_values)


def weighted_l2_norm(u: GridFunction, rho: float = 0.0, origin: float = 0.0) -> float:
    """``(int_a^b |u(t)|^2 exp(-2 rho (t - origin)) dt)^(1/2)``, exact for piecewise-linear u.

    ``origin`` shifts the exponent; the default 0 gives the plain weighted norm.
    """
    return math.sqrt(float(np.sum(_linear_sq_integrals(u, rho, origin))))


def weighted_step_norm(u: GridFunction, rho: float = 0.0, origin: float = 0.0) -> float:
    """Weighted L2 norm of the step function taking value ``u(t_i)`` on ``[t_i, t_{i+1})``.

    This is the function :func:`sdde.operators.integrate_rho` integrates.
    """
    return math.sqrt(float(np.sum(_step_sq_integrals(u.values[:-1], u.grid, rho, origin))))


def weighted_h1_norm(u: GridFunction, rho: float = 0.0, origin: float = 0.0) -> float:
    """``(||u||_{2,rho}^2 + ||u'||_{2,rho}^2)^(1/2)`` with u' the cell slopes."""
    val = np.sum(_linear_sq_integrals(u, rho, origin))
    der = np.sum(_step_sq_integrals(u.slopes, u.grid, rho, origin))
    return math.sqrt(float(val + der))


def l2_norm(u: GridFunction) -> float:
    return weighted_l2_norm(u, 0.0)


def h1_norm(u: GridFunction) -> float:
    return weighted_h1_norm(u, 0.0)


def sup_norm(u: GridFunction) -> float:
    """Max over nodes of the Euclidean norm; attained at a node for piecewise-linear u."""
    return float(np.max(np.linalg.norm(u.values, axis=1)))


def deriv_sup_norm(u: GridFunction) -> float:
    """Max over cells of the Euclidean norm of the slope."""
    return float(np.max(np.linalg.norm(u.slopes, axis=1)))


def embedding_constant(length: float) -> float:
    """Sobolev embedding constant ``L^(1/2) + L^(-1/2)`` of an interval of length L."""
    return math.sqrt(length) + 1.0 / math.sqrt(length)


def sobolev_embedding_check(u: GridFunction) -> tuple[float, float, bool]:
    """Compare ``sup|u|`` against the embedding bound with the unweighted H1 norm."""
    lhs = sup_norm(u)
    rhs = embedding_constant(u.grid.length) * h1_norm(u)
    return lhs, rhs, bool(lhs <= rhs + ATOL + RTOL * rhs)


def eval_at(u: GridFunction, t) -> np.ndarray:
    """Linear interpolation of ``u`` at time(s) ``t``; exact at nodes.

    A scalar ``t`` returns a ``(d,)`` vector, an array of times ``(len(t), d)``.
    """
    g = u.grid
    ts = np.asarray(t, dtype=float)
    scalar = ts.ndim == 0
    ts = np.atleast_1d(ts)
    slack = 1e-12 * g.delta
    if np.any(ts < g.a - slack) or np.any(ts > g.b + slack):
        raise OutOfDomain(f"t={t} outside [{g.a}, {g.b}]")
    x = (np.clip(ts, g.a, g.b) - g.a) / g.delta
    i = np.clip(np.floor(x).astype(int), 0, g.n - 2)
    f = np.clip(x - i, 0.0, 1.0)
    # Snap to nodes so nodal evaluation is bit-exact.
    near = np.rint(x)
    on_node = np.abs(x - near) <= 1e-12
    out = (1.0 - f)[:, None] * u.values[i] + f[:, None] * u.values[i + 1]
    if np.any(on_node):
        out[on_node] = u.values[near[on_node].astype(int)]
    return out[0] if scalar else out


def restrict(u: GridFunction, a: float, b: float) -> GridFunction:
    """Restriction of ``u`` to the node-aligned subinterval ``[a, b]``."""
    i = u.grid.index_of(a)
    j = u.grid.index_of(b)
    if i is None or j is None or j <= i:
        raise OutOfDomain(f"[{a}, {b}] is not a node-aligned subinterval of "
                          f"[{u.grid.a}, {u.grid.b}]")
    return GridFunction(Grid(u.nodes[i], u.nodes[j], j - i + 1), u.values[i:j + 1])


# ---------------------------------------------------------------------------
# CSV serialization: header ``t,x_1,...,x_d``, 17 significant digits.


def write_csv(u: GridFunction, target: Union[str, PathLike, io.TextIOBase, None] = None):
    """Write ``u`` as CSV. Returns the text when ``target`` is None."""
    buf = io.StringIO()
    buf.write(",".join(["t"] + [f"x_{k + 1}" for k in range(u.d)]) + "\n")
    for t, row in zip(u.nodes, u.values):
        buf.write(",".join(format(float(x), ".17g") for x in (t, *row)) + "\n")
    text = buf.getvalue()
    if target is None:
        return text
    if hasattr(target, "write"):
        target.write(text)
    else:
        with open(target, "w", newline="") as fh:
            fh.write(text)
    return None


def read_csv(source: Union[str, PathLike, io.TextIOBase]) -> GridFunction:
    """Inverse of :func:`write_csv`. Accepts a path, a file object, or CSV text."""
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source, newline="") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], [r for r in rows[1:] if r]
    if not header or header[0] != "t" or header[1:] != [f"x_{k + 1}" for k in range(len(header) - 1)]:
        raise ValueError(f"bad CSV header {header!r}")
    data = np.array([[float(x) for x in r] for r in body], dtype=float)
    t = data[:, 0]
    grid = Grid(t[0], t[-1], len(t))
    if not np.allclose(t, grid.nodes, rtol=0.0, atol=1e-9 * grid.delta + 1e-12):
        raise ValueError("CSV time column is not a uniform grid")
    return GridFunction(grid, data[:, 1:])
