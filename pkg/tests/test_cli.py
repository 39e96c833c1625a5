import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdde.cli import main
from sdde.errors import ParseError, ValidationError
from sdde.grid_fn import Grid, GridFunction, read_csv, write_csv
from sdde.problem_file import (bundled_problems, bundled_text, build, parse_problem, render,
                               resolve_problem)
from sdde.solver import SolverConfig

MINIMAL = """\
[problem]
family = constant_delay
h = 1
T = 2
lags = 1
coeffs = -1
"""


def files(path):
    return sorted(p.name for p in path.iterdir())


class TestParse:
    def test_minimal_fills_defaults(self):
        pf = parse_problem(MINIMAL)
        assert pf.family == "constant_delay"
        assert pf.config() == SolverConfig()
        prob = build(pf)
        assert prob.T == 2.0 and np.all(prob.phi.fn.values == 1.0)

    def test_rho_is_not_a_key(self):
        with pytest.raises(ParseError) as exc:
            parse_problem(MINIMAL + "rho = 3\n")
        assert exc.value.line == 7
        assert "line 7" in str(exc.value)

    @pytest.mark.parametrize("text,line", [
        ("[problem]\nfamily = academic\nh = 1\nT = 1\n[solvr]\n", 5),
        ("[problem]\nfamily = academic\nh = 1\nh = 2\n", 4),
        ("family = academic\n", 1),
        ("[problem]\nfamily academic\n", 2),
        ("[problem]\nfamily = academic\nh = 1\nT = 1\nlags = 1\n", 5),
        ('[problem]\nfamily = academic\nh = "1\n', 3),
        ("[problem]\nfamily = academic\nh = 1, x\n", 3),
    ])
    def test_parse_errors_carry_line(self, text, line):
        with pytest.raises(ParseError) as exc:
            parse_problem(text)
        assert exc.value.line == line

    @pytest.mark.parametrize("extra", [
        "[solver]\ndelta = 0.3\n",
        "[solver]\ntheta = 1.5\n",
        "[solver]\nmax_iters = 2.5\n",
        "[prehistory]\nkind = file\npath = \"missing.csv\"\n",
        "[prehistory]\nkind = constant\nvalue = 1, 2\n",
    ])
    def test_validation_errors(self, extra):
        with pytest.raises(ValidationError):
            parse_problem(MINIMAL + extra)

    def test_missing_family_parameter(self):
        with pytest.raises(ValidationError):
            parse_problem(MINIMAL.replace("coeffs = -1\n", ""))

    def test_comments_and_quotes(self):
        pf = parse_problem(MINIMAL + '[output]\ntrajectory = "a # b.csv"  # note\n')
        assert pf.output["trajectory"] == "a # b.csv"

    def test_bundled_corpus(self):
        assert bundled_problems() == ["academic", "blowup", "integro", "linear_delay",
                                      "state_delay"]
        for name in bundled_problems():
            assert bundled_text(name).lstrip().startswith("#")
            pf, stem = resolve_problem(name)
            assert stem == name and build(pf).T > 0

    def test_samples_prehistory_refines_exactly(self):
        pf = parse_problem(MINIMAL + "[prehistory]\nkind = samples\nvalues = 1, 0, 2\n"
                                     "[solver]\ndelta = 0.1\n")
        v = build(pf).phi.fn.values[:, 0]
        assert v[0] == 1.0 and v[5] == 0.0 and v[10] == 2.0
        assert v[3] == pytest.approx(0.4)

    def test_file_prehistory(self, tmp_path):
        g = Grid(-1.0, 0.0, 5)
        (tmp_path / "phi.csv").write_text(write_csv(GridFunction(g, g.nodes ** 2)))
        (tmp_path / "p.ini").write_text(MINIMAL + '[prehistory]\nkind = file\npath = "phi.csv"\n'
                                                  "[solver]\ndelta = 0.05\n")
        pf, _ = resolve_problem(tmp_path / "p.ini")
        phi = build(pf).phi
        assert np.array_equal(phi.fn.values[::5, 0], g.nodes ** 2)


names = st.text(st.sampled_from("abcxyz_-. #=,'"), min_size=1, max_size=12)


@st.composite
def problem_texts(draw):
    delta = draw(st.sampled_from([0.5, 0.25, 0.1]))
    h = delta * draw(st.integers(1, 8))
    T = delta * draw(st.integers(1, 8))
    n = draw(st.integers(1, 3))
    lags = sorted(draw(st.lists(st.floats(0, h), min_size=n, max_size=n)))
    coeffs = draw(st.lists(st.floats(-5, 5, allow_subnormal=False), min_size=n, max_size=n))
    lines = ["[problem]", "family = constant_delay", f"h = {h!r}", f"T = {T!r}",
             "lags = " + ", ".join(map(repr, lags)), "coeffs = " + ", ".join(map(repr, coeffs)),
             "[solver]", f"delta = {delta!r}",
             f"theta = {draw(st.floats(0.05, 0.95))!r}",
             f"max_iters = {draw(st.integers(1, 500))}",
             f"clip_rhs = {draw(st.sampled_from(['true', 'false']))}"]
    if draw(st.booleans()):
        lines += ["[output]", 'trajectory = "' + draw(names).replace('"', "") + '"']
    return "\n".join(lines) + "\n"


@given(problem_texts())
def test_render_round_trip(text):
    pf = parse_problem(text)
    again = parse_problem(render(pf))
    assert again == pf
    assert render(again) == render(pf)


class TestRun:
    def test_solve_academic(self, tmp_path):
        assert main(["solve", "academic", "--out", str(tmp_path)]) == 0
        assert files(tmp_path) == ["academic.csv", "academic.json"]
        u = read_csv(tmp_path / "academic.csv")
        pos = u.nodes >= 0
        assert np.abs(u.values[pos, 0] - 1.0 - u.nodes[pos]).max() <= 1e-6
        meta = json.loads((tmp_path / "academic.json").read_text())
        assert meta["status"] == "Global"

    def test_delta_override(self, tmp_path):
        assert main(["solve", "academic", "--delta", "0.01", "--out", str(tmp_path)]) == 0
        assert read_csv(tmp_path / "academic.csv").grid.n == 201

    def test_certify(self, tmp_path):
        assert main(["certify", "--samples", "10", "--out", str(tmp_path)]) == 0
        assert files(tmp_path) == ["certificate.csv", "certificate.json"]
        assert json.loads((tmp_path / "certificate.json").read_text())["passed"]

    def test_malformed_file(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text(MINIMAL + "rho = 3\n")
        out = tmp_path / "out"
        out.mkdir()
        assert main(["solve", str(bad), "--out", str(out)]) == 1
        assert files(out) == []

    def test_usage_errors(self, tmp_path):
        assert main([]) == 1
        assert main(["solve", "no_such_problem", "--out", str(tmp_path)]) == 1
        assert main(["solve", "academic", "--delta", "0.3", "--out", str(tmp_path)]) == 1
        assert files(tmp_path) == []

    def test_unexpected_blowup(self, tmp_path, capsys):
        args = ["solve", "blowup", "--delta", "0.005", "--out", str(tmp_path)]
        assert main(args) == 2
        assert "BlowUp" in capsys.readouterr().err
        assert main(args + ["--allow-blowup"]) == 0

    def test_depend(self, tmp_path):
        args = ["linear_delay", "--delta", "0.01", "--out", str(tmp_path)]
        assert main(["depend-datum", *args]) == 0
        assert main(["depend-rhs", *args, "--eps", "1e-2,1e-3"]) == 0
        summary = json.loads((tmp_path / "linear_delay_summary.json").read_text())
        assert summary["bound_type"] == "RightHandSide" and len(summary["pairs"]) == 2

    def test_deterministic(self, tmp_path):
        runs = []
        for k in range(2):
            out = tmp_path / str(k)
            out.mkdir()
            assert main(["solve", "state_delay", "--out", str(out)]) == 0
            runs.append({p.name: p.read_bytes() for p in out.iterdir()})
        assert runs[0] == runs[1]

    def test_help_documents_keys(self, capsys):
        assert main(["--help"]) == 0
        text = capsys.readouterr().out
        for key in ("lags", "kernel_rate", "alpha1", "clip_rhs", "trajectory", "path"):
            assert key in text

    def test_no_temp_files_left(self, tmp_path):
        main(["solve", "academic", "--out", str(tmp_path)])
        assert all(not n.startswith(".") and not n.endswith(".tmp") for n in os.listdir(tmp_path))
