import json
import math

import numpy as np
import pytest

from oracles import integro_linear_oracle, method_of_steps_linear
from sdde.errors import NoConvergence, NotInValpha, RhoOverflow
from sdde.grid_fn import Grid, GridFunction, Prehistory, deriv_sup_norm, read_csv, weighted_h1_norm
from sdde.rhs import (RhsModel, exp_kernel, linear_constant_delay, linear_integro, make_academic,
                      make_quadratic_zero_lag)
from sdde.solver import (BLOW_UP, BUDGET, GLOBAL, SolutionRecord, SolverConfig, _gamma,
                         contraction_factor, extend_prehistory, gamma_step, residual, select_rho,
                         solve_global, solve_local)

LINEAR = linear_constant_delay(1.0, [1.0], [-1.0])


def zero_rhs(d=1):
    return RhsModel(lambda t, phi: np.zeros(d), lambda a: 0.0, d, "zero")


def const_rhs(c):
    return RhsModel(lambda t, phi: np.array([c]), lambda a: 0.0, 1, "constant")


@pytest.fixture(scope="module")
def linear_solution():
    phi = Prehistory.constant(1.0, 1e-3, 1.0)
    return phi, solve_global(phi, LINEAR, 2.0, SolverConfig())


class TestExtend:
    def test_constant(self):
        ext = extend_prehistory(Prehistory.constant(1.0, 0.1, 4.0), 2.0)
        assert np.all(ext.fn.values == 4.0)
        assert ext.fn.grid.a == -1.0 and ext.fn.grid.b == 2.0

    def test_identity(self):
        ext = extend_prehistory(Prehistory.from_callable(1.0, 0.1, lambda t: t), 1.0)
        assert np.allclose(ext.fn.values[:11, 0], ext.fn.nodes[:11])
        assert np.all(ext.fn.values[10:] == 0.0)

    @pytest.mark.parametrize("seed", range(50))
    def test_deriv_sup_preserved(self, seed):
        rng = np.random.default_rng(seed)
        phi = Prehistory(GridFunction(Grid(-1.0, 0.0, 21), rng.normal(size=(21, 2))))
        ext = extend_prehistory(phi, 0.5)
        assert deriv_sup_norm(ext.fn) == phi.deriv_sup
        assert not np.any(ext.fn.slopes[20:])

    def test_rejects_nonpositive_T(self):
        with pytest.raises(ValueError):
            extend_prehistory(Prehistory.constant(1.0, 0.1, 1.0), 0.0)


class TestSelectRho:
    def test_zero_lipschitz(self):
        assert select_rho(0.0, 0.7) == 1.0

    def test_cubic_root(self):
        # (1 + 1/rho^2) / (2 rho) = 1/2  <=>  rho^3 - rho^2 - 1 = 0.
        lo, hi = 1.0, 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if mid ** 3 - mid ** 2 - 1 < 0 else (lo, mid)
        assert select_rho(1.0, math.sqrt(0.5)) == pytest.approx(lo, abs=1e-9)
        assert lo == pytest.approx(1.46557, abs=1e-5)

    @pytest.mark.parametrize("L", [0.3, 1.0, 2.0, 17.0, 1e3])
    @pytest.mark.parametrize("theta", [0.3, 0.7, 0.95])
    def test_minimal(self, L, theta):
        def ok(r):
            return (1 + 1 / r ** 2) * L ** 2 / (2 * r) <= theta ** 2
        rho = select_rho(L, theta)
        assert ok(rho)
        assert rho == 1.0 or not ok(rho - 1e-6 * max(1.0, rho))
        assert contraction_factor(L, rho) <= theta * (1 + 1e-12)

    def test_overflow(self):
        with pytest.raises(RhoOverflow):
            select_rho(1e4, 0.7, rho_max=100.0)

    @pytest.mark.parametrize("theta", [0.0, 1.0])
    def test_theta_range(self, theta):
        with pytest.raises(ValueError):
            select_rho(1.0, theta)


class TestGammaStep:
    phi = Prehistory.constant(0.5, 0.05, 1.0)

    def test_zero_rhs(self):
        ext = extend_prehistory(self.phi, 1.0)
        v = GridFunction(ext.fn.grid, np.zeros((ext.fn.grid.n, 1)))
        assert not np.any(gamma_step(v, ext, zero_rhs(), 1.0, 2.0).values)

    def test_constant_rhs(self):
        ext = extend_prehistory(self.phi, 1.0)
        v = GridFunction(ext.fn.grid, np.zeros((ext.fn.grid.n, 1)))
        out = gamma_step(v, ext, const_rhs(0.7), 1.0, 2.0)
        t = ext.fn.nodes
        assert np.allclose(out.values[:, 0], 0.7 * np.maximum(t, 0.0), atol=1e-14)
        assert np.all(out.values[:ext.m + 1] == 0.0)

    def test_rejects_nonzero_prehistory_part(self):
        ext = extend_prehistory(self.phi, 1.0)
        with pytest.raises(ValueError):
            gamma_step(ext.fn, ext, zero_rhs(), 1.0, 2.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_measured_contraction(self, seed):
        rng = np.random.default_rng(seed)
        h, T, delta, alpha = 1.0, 2.0, 0.01, 2.0
        G = make_academic(h)
        phi = Prehistory.constant(h, delta, 1.0)
        ext = extend_prehistory(phi, T)
        rho = select_rho(G.lipschitz_at(alpha), 0.7)
        m = ext.m
        tail = Grid(0.0, T, ext.fn.grid.n - m)

        def rand_v():
            vals = np.zeros((ext.fn.grid.n, 1))
            vals[m + 1:] = np.cumsum(rng.normal(scale=0.05, size=(ext.fn.grid.n - m - 1, 1)), 0)
            return GridFunction(ext.fn.grid, vals)

        v, w = rand_v(), rand_v()
        gv = gamma_step(v, ext, G, alpha, rho)
        gw = gamma_step(w, ext, G, alpha, rho)
        num = weighted_h1_norm(GridFunction(tail, (gv.values - gw.values)[m:]), rho)
        den = weighted_h1_norm(GridFunction(tail, (v.values - w.values)[m:]), rho)
        assert num / den <= contraction_factor(G.lipschitz_at(alpha), rho) + 0.05


class TestSolveLocal:
    def test_constant_solution(self):
        phi = Prehistory.constant(1.0, 0.01, 5.0)
        rec = solve_local(phi, zero_rhs(), 2.0, 1.0, SolverConfig(delta=0.01))
        assert rec.status == GLOBAL and rec.T0 == 2.0
        assert np.all(rec.trajectory.values == 5.0)
        assert rec.residual == 0.0

    def test_method_of_steps(self, linear_solution):
        _, rec = linear_solution
        u = rec.trajectory
        x = lambda t: u.values[u.grid.index_of(t), 0]
        assert x(1.0) == pytest.approx(0.0, abs=5e-3)
        assert x(2.0) == pytest.approx(-0.5, abs=5e-3)
        assert np.abs(u.values[:, 0] - method_of_steps_linear(u.nodes)).max() <= 5e-3

    def test_academic(self):
        phi = Prehistory.constant(1.0, 1e-3, 1.0)
        rec = solve_local(phi, make_academic(1.0), 1.0, 1.0, SolverConfig())
        u = rec.trajectory
        pos = u.nodes >= 0
        assert np.abs(u.values[pos, 0] - 1.0 - u.nodes[pos]).max() <= 1e-6
        assert rec.residual <= 1e-6

    def test_prehistory_exact(self, linear_solution):
        phi, rec = linear_solution
        assert np.array_equal(rec.trajectory.values[:phi.grid.n], phi.fn.values)

    def test_fixed_point_property(self):
        phi = Prehistory.constant(1.0, 0.01, 1.0)
        cfg = SolverConfig(delta=0.01)
        rec = solve_local(phi, make_academic(1.0), 1.0, 2.0, cfg)
        ext = extend_prehistory(phi, 1.0)
        v = rec.trajectory.values - ext.fn.values
        again, _ = _gamma(v, ext, make_academic(1.0), 2.0, cfg.clip_rhs)
        tail = Grid(0.0, 1.0, ext.fn.grid.n - ext.m)
        gap = weighted_h1_norm(GridFunction(tail, (v - again)[ext.m:]), rec.rho_used[0])
        assert gap <= 2 * cfg.fp_tol

    def test_uniqueness_from_random_start(self, rng):
        phi = Prehistory.constant(1.0, 0.01, 1.0)
        cfg = SolverConfig(delta=0.01)
        G = LINEAR
        a = solve_local(phi, G, 2.0, 1.0, cfg)
        grid = Grid.from_spacing(-1.0, 2.0, 0.01)
        vals = np.zeros((grid.n, 1))
        vals[101:] = np.cumsum(rng.normal(scale=0.01, size=(grid.n - 101, 1)), axis=0)
        b = solve_local(phi, G, 2.0, 1.0, cfg, v0=GridFunction(grid, vals))
        diff = GridFunction(grid, a.trajectory.values - b.trajectory.values)
        assert weighted_h1_norm(diff, a.rho_used[0]) <= 10 * cfg.fp_tol

    def test_prehistory_outside_valpha(self):
        phi = Prehistory.from_callable(1.0, 0.01, lambda t: 3 * t)
        with pytest.raises(NotInValpha):
            solve_local(phi, LINEAR, 1.0, 1.0, SolverConfig(delta=0.01))

    def test_wrong_lipschitz_constant_is_detected(self):
        # x' = 50 x(t) with a claimed constant of 0: no contraction in the chosen weight.
        bad = RhsModel(lambda t, p: 50.0 * p.values[-1], lambda a: 0.0, 1, "too steep")
        phi = Prehistory.constant(0.5, 0.01, 1e-3)
        with pytest.raises(NoConvergence):
            solve_local(phi, bad, 4.0, 1e9, SolverConfig(delta=0.01, max_iters=30,
                                                          clip_rhs=False))

    def test_horizon_where_slope_exceeds_alpha(self):
        # x' = 1 + t gives slope above alpha = 1.5 after t = 0.5.
        G = RhsModel(lambda t, p: np.array([1.0 + t]), lambda a: 0.0, 1, "ramp")
        rec = solve_local(Prehistory.constant(1.0, 0.01, 0.0), G, 2.0, 1.5,
                          SolverConfig(delta=0.01))
        assert rec.status == BUDGET
        assert rec.T0 == pytest.approx(0.5, abs=0.011)
        assert deriv_sup_norm(rec.trajectory) <= 1.5 * (1 + 1e-9)


    def test_integro_against_ode_oracle(self):
        exact = integro_linear_oracle(-0.5, 0.5, 1.0)
        errs = []
        for delta in (1e-2, 5e-3):
            G = linear_integro(1.0, 1.0, delta, -0.5, 0.5, 1.0, exp_kernel(1.0, 1.0, delta))
            rec = solve_global(Prehistory.constant(1.0, delta, 1.0), G, 1.0,
                               SolverConfig(delta=delta))
            u = rec.trajectory
            pos = u.nodes >= 0
            errs.append(np.abs(u.values[pos, 0] - exact(u.nodes[pos])).max())
            assert rec.status == GLOBAL
        assert errs[0] <= 5e-3
        assert 1.4 <= errs[0] / errs[1] <= 2.6


class TestSolveGlobal:
    def test_single_stage(self, linear_solution):
        _, rec = linear_solution
        assert rec.status == GLOBAL and rec.T0 == 2.0
        assert len(rec.alphas_used) == 1
        assert rec.measured_contraction[0] < 1.0
        assert rec.measured_contraction[0] <= rec.theoretical_contraction[0] + 0.05

    def test_stages_agree_and_horizon_monotone(self):
        phi = Prehistory.from_callable(1.0, 1e-3, lambda t: 1 + t / 2)
        rec = solve_global(phi, LINEAR, 2.0, SolverConfig(alpha1=0.6))
        assert len(rec.alphas_used) >= 2
        assert rec.alphas_used[1] == 2 * rec.alphas_used[0]
        assert max(rec.stage_mismatch) <= 1e-8
        assert list(rec.stage_times) == sorted(rec.stage_times)

    def test_blow_up(self):
        phi = Prehistory.constant(0.05, 1e-3, 1.0)
        rec = solve_global(phi, make_quadratic_zero_lag(0.05), 2.0, SolverConfig())
        assert rec.status == BLOW_UP
        assert 0.95 <= rec.T0 <= 1.05
        assert list(rec.stage_times) == sorted(rec.stage_times)

    def test_alpha1_must_exceed_prehistory_slope(self):
        phi = Prehistory.from_callable(1.0, 0.01, lambda t: t)
        with pytest.raises(NotInValpha):
            solve_global(phi, LINEAR, 1.0, SolverConfig(delta=0.01, alpha1=1.0))


class TestResidual:
    def test_zero_rhs(self):
        rec = solve_local(Prehistory.constant(1.0, 0.1, 2.0), zero_rhs(), 1.0, 1.0,
                          SolverConfig(delta=0.1))
        assert residual(rec, zero_rhs()) == 0.0

    def test_first_order(self):
        res = []
        for delta in (2e-3, 1e-3):
            phi = Prehistory.constant(1.0, delta, 1.0)
            res.append(solve_global(phi, LINEAR, 2.0, SolverConfig(delta=delta)).residual)
        assert res[1] <= 1e-2
        assert 0.7 <= res[1] / (res[0] / 2) <= 1.3


class TestRecord:
    def test_serialization(self, linear_solution, tmp_path):
        _, rec = linear_solution
        rec.write(tmp_path / "x.csv", tmp_path / "x.json")
        back = read_csv(tmp_path / "x.csv")
        assert np.array_equal(back.values, rec.trajectory.values)
        meta = json.loads((tmp_path / "x.json").read_text())
        for key in ("status", "T0", "alphas_used", "rho_used", "measured_contraction",
                    "residual"):
            assert key in meta
        assert meta["status"] == "Global"

    def test_rejects_unknown_status(self, linear_solution):
        _, rec = linear_solution
        with pytest.raises(ValueError):
            SolutionRecord(rec.trajectory, "Done", 1.0, (), (), (), 0.0)

    def test_config_validation(self):
        for bad in ({"theta": 1.0}, {"delta": 0.0}, {"max_iters": 0}, {"alpha1": -1.0}):
            with pytest.raises(ValueError):
                SolverConfig(**bad)
