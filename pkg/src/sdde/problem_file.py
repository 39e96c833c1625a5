"""Problem-definition files: a strict ``[section]`` / ``key = value`` format.

Values are numbers, comma-separated number lists, bare words, or quoted
strings (used for paths). ``#`` starts a comment outside quotes. Unknown
sections or keys are parse errors: a misspelled key would otherwise silently
fall back to a default.
"""

from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ParseError, ValidationError
from .grid_fn import Grid, GridFunction, Prehistory, eval_at, read_csv
from .rhs import (RhsModel, exp_kernel, linear_constant_delay, linear_integro,
                  linear_state_delay, make_academic, make_quadratic_zero_lag)
from .solver import SolverConfig

FAMILY_KEYS = {
    "constant_delay": {"lags": True, "coeffs": True, "forcing": False},
    "academic": {},
    "state_delay": {"offsets": True, "gains": True, "coeffs": True},
    "integro": {"f_gain": False, "g3_gain": True, "g_gain": False, "kernel": False,
                "kernel_rate": False, "kernel_scale": False, "kernel_mode": False},
    "quadratic": {},
}
PROBLEM_KEYS = {"family", "dim", "h", "T"}
PREHISTORY_KEYS = {
    "constant": {"value": True},
    "linear": {"intercept": True, "slope": True},
    "samples": {"values": True},
    "file": {"path": True},
}
SOLVER_KEYS = {f.name for f in fields(SolverConfig)}
OUTPUT_KEYS = {"trajectory", "metadata", "pairs", "summary"}
SECTIONS = ("problem", "prehistory", "solver", "output")

_ALL_PROBLEM_KEYS = PROBLEM_KEYS | {k for keys in FAMILY_KEYS.values() for k in keys}
_ALL_PREHISTORY_KEYS = {"kind"} | {k for keys in PREHISTORY_KEYS.values() for k in keys}
_SECTION_KEYS = {
    "problem": _ALL_PROBLEM_KEYS,
    "prehistory": _ALL_PREHISTORY_KEYS,
    "solver": SOLVER_KEYS,
    "output": OUTPUT_KEYS,
}


class Quoted(str):
    """A value written in quotes; rendered back with quotes."""


@dataclass(frozen=True)
class ProblemFile:
    """Parsed sections; each maps keys to values exactly as written."""

    problem: dict
    prehistory: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    base_dir: Path = field(default=Path("."), compare=False)

    @property
    def family(self) -> str:
        return self.problem["family"]

    def config(self, delta: Optional[float] = None) -> SolverConfig:
        kw = {k: v for k, v in self.solver.items()}
        for k in ("max_iters", "max_stages"):
            if k in kw:
                v = kw[k]
                if not isinstance(v, float) or v != int(v):
                    raise ValidationError(f"[solver] {k} must be an integer, got {v!r}")
                kw[k] = int(v)
        if "clip_rhs" in kw:
            kw["clip_rhs"] = _bool(kw["clip_rhs"])
        if kw.get("alpha1") == "none":
            kw["alpha1"] = None
        if delta is not None:
            kw["delta"] = float(delta)
        try:
            return SolverConfig(**kw)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"[solver]: {exc}") from exc


# ---------------------------------------------------------------------------
# Parsing


def _strip_comment(line: str) -> str:
    out, quote = [], None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    if quote:
        raise ValueError("unterminated quote")
    return "".join(out).strip()


def _scalar(tok: str):
    try:
        return float(tok)
    except ValueError:
        pass
    if not tok or not all(c.isalnum() or c in "_-." for c in tok):
        raise ValueError(f"bad value {tok!r}")
    return tok


def parse_value(raw: str):
    raw = raw.strip()
    if not raw:
        raise ValueError("missing value")
    if raw[0] in "\"'":
        parts = shlex.split(raw)
        if len(parts) != 1:
            raise ValueError(f"bad quoted value {raw!r}")
        return Quoted(parts[0])
    if "," in raw:
        items = [t.strip() for t in raw.split(",")]
        vals = [_scalar(t) for t in items]
        if not all(isinstance(v, float) for v in vals):
            raise ValueError(f"lists must be numeric, got {raw!r}")
        return tuple(vals)
    return _scalar(raw)


def parse_problem(text: str, base_dir=".") -> ProblemFile:
    """Parse problem-file text. Raises ParseError (with a line number) or ValidationError."""
    sections: dict[str, dict] = {}
    lines: dict[tuple[str, str], int] = {}
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        try:
            body = _strip_comment(line)
        except ValueError as exc:
            raise ParseError(str(exc), no) from None
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                raise ParseError(f"bad section header {body!r}", no)
            name = body[1:-1].strip()
            if name not in SECTIONS:
                raise ParseError(f"unknown section [{name}]", no)
            if name in sections:
                raise ParseError(f"duplicate section [{name}]", no)
            sections[name] = {}
            current = name
            continue
        if "=" not in body:
            raise ParseError(f"expected 'key = value', got {body!r}", no)
        if current is None:
            raise ParseError("key outside of any section", no)
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _SECTION_KEYS[current]:
            raise ParseError(f"unknown key {key!r} in [{current}]", no)
        if key in sections[current]:
            raise ParseError(f"duplicate key {key!r}", no)
        try:
            sections[current][key] = parse_value(raw)
        except ValueError as exc:
            raise ParseError(str(exc), no) from None
        lines[(current, key)] = no
    if "problem" not in sections:
        raise ValidationError("missing [problem] section")
    pf = ProblemFile(sections["problem"], sections.get("prehistory", {}),
                     sections.get("solver", {}), sections.get("output", {}), Path(base_dir))
    _check_family_keys(pf, lines)
    validate(pf)
    return pf


def _check_family_keys(pf: ProblemFile, lines):
    fam = pf.problem.get("family")
    if fam not in FAMILY_KEYS:
        raise ValidationError(f"family must be one of {sorted(FAMILY_KEYS)}, got {fam!r}")
    allowed = PROBLEM_KEYS | set(FAMILY_KEYS[fam])
    for key in pf.problem:
        if key not in allowed:
            raise ParseError(f"key {key!r} does not belong to family {fam}",
                             lines.get(("problem", key)))
    kind = pf.prehistory.get("kind", "constant")
    if kind in PREHISTORY_KEYS:
        allowed = {"kind"} | set(PREHISTORY_KEYS[kind])
        for key in pf.prehistory:
            if key not in allowed:
                raise ParseError(f"key {key!r} does not belong to prehistory kind {kind}",
                                 lines.get(("prehistory", key)))


def load_problem(path) -> ProblemFile:
    path = Path(path)
    return parse_problem(path.read_text(encoding="utf-8"), path.parent)


def bundled_problems() -> list[str]:
    root = resources.files("sdde") / "problems"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def bundled_text(name: str) -> str:
    name = name[:-4] if name.endswith(".ini") else name
    return (resources.files("sdde") / "problems" / f"{name}.ini").read_text(encoding="utf-8")


def resolve_problem(ref) -> tuple[ProblemFile, str]:
    """A path on disk, or the name of a bundled problem. Returns the file and its stem."""
    path = Path(ref)
    if path.is_file():
        return load_problem(path), path.stem
    name = path.name[:-4] if path.name.endswith(".ini") else path.name
    if name in bundled_problems():
        return parse_problem(bundled_text(name), "."), name
    raise FileNotFoundError(f"no problem file {ref!r} (bundled: {', '.join(bundled_problems())})")


# ---------------------------------------------------------------------------
# Rendering


def _render_value(v) -> str:
    if isinstance(v, Quoted):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, tuple):
        return ", ".join(_render_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(pf: ProblemFile) -> str:
    out = []
    for name in SECTIONS:
        sec = getattr(pf, name)
        if not sec and name != "problem":
            continue
        out.append(f"[{name}]")
        for key in sorted(sec, key=lambda k: (k != "family" and k != "kind", k)):
            out.append(f"{key} = {_render_value(sec[key])}")
        out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Validation and construction


def _bool(v) -> bool:
    if isinstance(v, float):
        return v != 0.0
    if v in ("true", "yes", "on"):
        return True
    if v in ("false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {v!r}")


def _num(sec, key, name, required=True, default=None):
    if key not in sec:
        if required:
            raise ValidationError(f"[{name}] needs {key!r}")
        return default
    v = sec[key]
    if not isinstance(v, float):
        raise ValidationError(f"[{name}] {key} must be a number, got {v!r}")
    return v


def _vec(sec, key, name, length=None, required=True, default=None):
    if key not in sec:
        if required:
            raise ValidationError(f"[{name}] needs {key!r}")
        return default
    v = sec[key]
    if isinstance(v, float):
        v = (v,)
    if not isinstance(v, tuple):
        raise ValidationError(f"[{name}] {key} must be numeric, got {v!r}")
    if length is not None and len(v) != length:
        raise ValidationError(f"[{name}] {key} needs {length} entries, got {len(v)}")
    return np.asarray(v, dtype=float)


def _dims(pf):
    p = pf.problem
    h = _num(p, "h", "problem")
    T = _num(p, "T", "problem")
    d = _num(p, "dim", "problem", required=False, default=1.0)
    if not (h > 0 and T > 0 and math.isfinite(h) and math.isfinite(T)):
        raise ValidationError("[problem] h and T must be positive")
    if d != int(d) or d < 1:
        raise ValidationError(f"[problem] dim must be a positive integer, got {d}")
    return h, T, int(d)


def validate(pf: ProblemFile, delta: Optional[float] = None):
    """Check every invariant that does not need a solve. Raises ValidationError."""
    h, T, d = _dims(pf)
    cfg = pf.config(delta)
    cells = h / cfg.delta
    if abs(cells - round(cells)) > 1e-9 * max(1.0, cells) or round(cells) < 1:
        raise ValidationError(f"delta={cfg.delta} does not divide h={h}")
    cells_T = T / cfg.delta
    if abs(cells_T - round(cells_T)) > 1e-9 * max(1.0, cells_T):
        raise ValidationError(f"delta={cfg.delta} does not divide T={T}")
    build_rhs(pf, cfg.delta)
    build_prehistory(pf, cfg.delta)
    for key, v in pf.output.items():
        if not isinstance(v, str):
            raise ValidationError(f"[output] {key} must be a path")


def build_rhs(pf: ProblemFile, delta: float) -> RhsModel:
    h, T, d = _dims(pf)
    p = pf.problem
    fam = pf.family
    try:
        if fam == "constant_delay":
            lags = _vec(p, "lags", "problem")
            coeffs = _vec(p, "coeffs", "problem", len(lags))
            forcing = _vec(p, "forcing", "problem", d, required=False)
            return linear_constant_delay(h, lags, coeffs, forcing, d)
        if fam == "academic":
            if d != 1:
                raise ValidationError("the academic family is scalar (dim = 1)")
            return make_academic(h)
        if fam == "quadratic":
            if d != 1:
                raise ValidationError("the quadratic family is scalar (dim = 1)")
            return make_quadratic_zero_lag(h)
        if fam == "state_delay":
            offsets = _vec(p, "offsets", "problem")
            gains = _vec(p, "gains", "problem", len(offsets))
            coeffs = _vec(p, "coeffs", "problem", len(offsets))
            return linear_state_delay(h, offsets, gains, coeffs, d)
        if fam == "integro":
            kind = p.get("kernel", "exp")
            rate = _num(p, "kernel_rate", "problem", False, 1.0)
            scale = _num(p, "kernel_scale", "problem", False, 1.0)
            if kind == "const":
                rate = 0.0
            elif kind != "exp":
                raise ValidationError(f"[problem] kernel must be exp or const, got {kind!r}")
            mode = p.get("kernel_mode", "scalar")
            kdim = d if mode == "componentwise" else 1
            k = exp_kernel(h, T, delta, rate, scale, kdim)
            return linear_integro(h, T, delta, _num(p, "f_gain", "problem", False, 0.0),
                                  _num(p, "g3_gain", "problem"),
                                  _num(p, "g_gain", "problem", False, 1.0), k, mode, d)
    except ValidationError:
        raise
    except ValueError as exc:
        raise ValidationError(f"[problem] {exc}") from exc
    raise ValidationError(f"unknown family {fam!r}")


def build_prehistory(pf: ProblemFile, delta: float) -> Prehistory:
    h, _, d = _dims(pf)
    s = pf.prehistory
    kind = s.get("kind", "constant")
    if kind not in PREHISTORY_KEYS:
        raise ValidationError(f"[prehistory] kind must be one of {sorted(PREHISTORY_KEYS)}")
    grid = Grid.from_spacing(-h, 0.0, delta)
    if kind == "constant":
        c = _vec(s, "value", "prehistory", required=False, default=np.ones(1))
        c = _broadcast(c, d, "value")
        return Prehistory(GridFunction(grid, np.tile(c, (grid.n, 1))))
    if kind == "linear":
        a = _broadcast(_vec(s, "intercept", "prehistory"), d, "intercept")
        b = _broadcast(_vec(s, "slope", "prehistory"), d, "slope")
        return Prehistory(GridFunction(grid, a + grid.nodes[:, None] * b))
    if kind == "samples":
        vals = _vec(s, "values", "prehistory")
        if len(vals) % d or len(vals) // d < 2:
            raise ValidationError("[prehistory] values must hold at least 2 samples per component")
        coarse = GridFunction(Grid(-h, 0.0, len(vals) // d), vals.reshape(-1, d))
        return Prehistory(_resample(coarse, grid))
    path = s.get("path")
    if not isinstance(path, str):
        raise ValidationError("[prehistory] path must be a quoted path")
    full = Path(path) if Path(path).is_absolute() else pf.base_dir / path
    if not full.is_file():
        raise ValidationError(f"[prehistory] file {str(full)!r} does not exist")
    try:
        coarse = read_csv(full)
    except (ValueError, OSError) as exc:
        raise ValidationError(f"[prehistory] cannot read {str(full)!r}: {exc}") from exc
    if coarse.d != d or abs(coarse.grid.a + h) > 1e-9 or abs(coarse.grid.b) > 1e-9:
        raise ValidationError(f"[prehistory] file must hold {d} components on [-h, 0]")
    coarse = GridFunction(Grid(-h, 0.0, coarse.grid.n), coarse.values)
    return Prehistory(_resample(coarse, grid))


def _broadcast(v, d, key):
    if len(v) == 1:
        return np.repeat(v, d)
    if len(v) != d:
        raise ValidationError(f"[prehistory] {key} needs 1 or {d} entries")
    return v


def _resample(coarse: GridFunction, grid: Grid) -> GridFunction:
    """Exact resampling of a piecewise-linear function onto a refinement of its grid."""
    ratio = (coarse.grid.delta / grid.delta)
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
        raise ValidationError(f"prehistory spacing {coarse.grid.delta} is not a multiple of "
                              f"delta={grid.delta}")
    vals = eval_at(coarse, grid.nodes)
    vals[::round(ratio)] = coarse.values
    return GridFunction(grid, vals)


@dataclass(frozen=True)
class Problem:
    """Everything needed for a solve, built from a :class:`ProblemFile`."""

    phi: Prehistory
    rhs: RhsModel
    T: float
    cfg: SolverConfig
    source: Any = None


def build(pf: ProblemFile, delta: Optional[float] = None) -> Problem:
    validate(pf, delta)
    cfg = pf.config(delta)
    _, T, _ = _dims(pf)
    return Problem(build_prehistory(pf, cfg.delta), build_rhs(pf, cfg.delta), T, cfg, pf)
