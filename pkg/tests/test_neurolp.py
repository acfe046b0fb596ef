import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from cndsvne.neurolp import (
    GeneralFormLp,
    SolverConfig,
    energy,
    energy_gradient,
    integrate_flow,
    kkt_breakdown,
    kkt_residual,
    solve_lp,
    vertex_oracle,
)
from lpgen import bounded_feasible_lp, random_lp


def _linprog(lp):
    n1, n2 = lp.n1, lp.n2
    bounds = [(0, None)] * n1 + [(None, None)] * n2
    a_ge = np.hstack([lp.m11.toarray(), lp.m12.toarray()])
    a_eq = np.hstack([lp.m21.toarray(), lp.m22.toarray()])
    res = linprog(
        lp.d, A_ub=-a_ge if lp.p1 else None, b_ub=-lp.r1 if lp.p1 else None,
        A_eq=a_eq if lp.p2 else None, b_eq=lp.r2 if lp.p2 else None, bounds=bounds, method="highs",
    )
    return res


def test_energy_zero_exactly_at_optimal_pair():
    # min x s.t. x >= 1: optimum x=1 with multiplier 1
    lp = GeneralFormLp.from_rows([1.0], [[1.0]], [1.0])
    assert energy(lp, np.array([1.0, 1.0])) == 0.0
    assert energy(lp, np.array([1.0, 0.5])) > 0.0
    assert kkt_residual(lp, np.array([1.0, 1.0])) == 0.0


def test_energy_terms_hand_computed():
    lp = GeneralFormLp.from_rows([1.0], [[1.0]], [1.0])
    # z=-1, xi=2: gap=-1-2=-3, z sign term 1, a=-2 -> 4, b=1-2=-1 -> 1
    assert energy(lp, np.array([-1.0, 2.0])) == pytest.approx(0.5 * 9 + 1 + 4 + 1)
    parts = kkt_breakdown(lp, np.array([-1.0, 2.0]))
    assert parts["gap"] == 3.0 and parts["primal_ineq"] == 2.0 and parts["dual_ineq"] == 1.0


def test_energy_is_convex_along_random_segments():
    rng = np.random.default_rng(3)
    for _ in range(20):
        lp = random_lp(rng, 12)
        size = lp.num_vars + lp.num_rows
        u, v = rng.normal(size=size), rng.normal(size=size)
        for t in np.linspace(0.1, 0.9, 5):
            mid = energy(lp, t * u + (1 - t) * v)
            assert mid <= t * energy(lp, u) + (1 - t) * energy(lp, v) + 1e-9


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(11)
    lp = random_lp(rng, 15)
    u = rng.normal(size=lp.num_vars + lp.num_rows)
    g = energy_gradient(lp, u)
    h = 1e-6
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        fd = (energy(lp, u + e) - energy(lp, u - e)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-5)


def test_dual_of_dual_objective_matches():
    rng = np.random.default_rng(5)
    lp = bounded_feasible_lp(rng)
    primal = vertex_oracle(lp)
    dual = vertex_oracle(lp.dual())
    assert primal.status == dual.status == "optimal"
    # the dual is stored as a minimization of the negated objective
    assert primal.objective == pytest.approx(-dual.objective, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("integrator", ["implicit-euler", "explicit-euler", "rk4"])
def test_every_integrator_descends_energy(integrator):
    rng = np.random.default_rng(21)
    lp = bounded_feasible_lp(rng, 6, 4)
    cfg = SolverConfig(integrator=integrator, max_steps=300, record_trace=True, step_size=1e-2)
    state, report = integrate_flow(lp, np.zeros(lp.num_vars + lp.num_rows), cfg)
    energies = [e for _, e, _ in report.trace]
    assert all(b <= a for a, b in zip(energies, energies[1:]))
    assert energies[-1] < energies[0]


def test_implicit_solver_matches_two_independent_oracles():
    rng = np.random.default_rng(8)
    for _ in range(8):
        lp = bounded_feasible_lp(rng)
        z, xi, report = solve_lp(lp)
        assert report.converged
        ref = _linprog(lp)
        assert ref.status == 0
        oracle = vertex_oracle(lp)
        assert oracle.objective == pytest.approx(ref.fun, rel=1e-7, abs=1e-7)
        assert lp.objective(z) == pytest.approx(ref.fun, rel=1e-4, abs=1e-4)


def test_oracle_reports_infeasible_and_unbounded():
    infeasible = GeneralFormLp.from_rows([1.0], [[1.0], [-1.0]], [2.0, -1.0])
    assert vertex_oracle(infeasible).status == "infeasible"
    unbounded = GeneralFormLp.from_rows([-1.0], [[1.0]], [0.0])
    assert vertex_oracle(unbounded).status == "unbounded"


def test_oracle_column_cap():
    lp = GeneralFormLp.from_rows(np.ones(30), np.ones((1, 30)), [1.0])
    with pytest.raises(ValueError):
        vertex_oracle(lp)


def test_solve_lp_accepts_primal_or_full_guess():
    rng = np.random.default_rng(2)
    lp = bounded_feasible_lp(rng, 5, 3)
    z_a, _, _ = solve_lp(lp, initial_guess=np.ones(lp.num_vars))
    z_b, _, _ = solve_lp(lp, initial_guess=np.ones(lp.num_vars + lp.num_rows))
    assert lp.objective(z_a) == pytest.approx(lp.objective(z_b), abs=1e-4)
    with pytest.raises(ValueError):
        solve_lp(lp, initial_guess=np.ones(3 + lp.num_vars))


def test_zero_beta_leaves_state_untouched():
    lp = GeneralFormLp.from_rows([1.0], [[1.0]], [1.0])
    u0 = np.array([3.0, -2.0])
    state, report = integrate_flow(lp, u0, SolverConfig(beta=0.0))
    assert np.array_equal(state.u, u0)
    assert report.steps == 0


def test_trace_csv(tmp_path):
    lp = GeneralFormLp.from_rows([1.0], [[1.0]], [1.0])
    _, report = integrate_flow(lp, np.zeros(2), SolverConfig(record_trace=True))
    path = tmp_path / "trace.csv"
    report.write_trace_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,energy,kkt_residual"
    assert len(lines) == len(report.trace) + 1


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(integrator="leapfrog")
    with pytest.raises(ValueError):
        SolverConfig(step_size=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_gradient_vanishes_exactly_where_energy_does(seed):
    rng = np.random.default_rng(seed)
    lp = bounded_feasible_lp(rng, 6, 4)
    oracle = vertex_oracle(lp)
    dual = vertex_oracle(lp.dual())
    u = np.concatenate([oracle.z, dual.z])
    assert energy(lp, u) < 1e-12
    assert np.abs(energy_gradient(lp, u)).max() < 1e-5
    assert math.isfinite(kkt_residual(lp, u))
