import math
import warnings

import numpy as np
import pytest

from mfbsde.bsde import (
    Driver,
    MeanFieldProblem,
    TerminalCondition,
    apriori_bound,
    check_lipschitz,
    interpolants,
    lipschitz_ratio,
    meanfield_expectation,
    residual_check,
    solve_markovian,
    zero_driver,
)
from mfbsde.chain import transition_matrix, validate_generator
from mfbsde.dsl import DriverExpr
from mfbsde.errors import (
    DimensionMismatch,
    GridTooCoarse,
    LipschitzWarning,
    NonFiniteValue,
    NotOnSimplex,
    ValidationError,
)
from problem_set import A2, RATE1, acceptance_problems, random_generator


def _problem(gen, g, f, mu0=None):
    mu0 = np.full(gen.N, 1.0 / gen.N) if mu0 is None else mu0
    return MeanFieldProblem(gen, mu0, TerminalCondition.markovian(g), f)


def _expr(gen, text, C=1.0):
    return DriverExpr.parse(text, C, gen.N).to_driver(gen)


def _backward_transition(gen, grid, g):
    return np.array([transition_matrix(gen, t, gen.T).T @ g for t in grid])


@pytest.fixture
def piecewise3():
    return random_generator(np.random.default_rng(21), 3, n_segments=3)


def test_zero_driver_is_conditional_expectation(piecewise3):
    g = np.array([1.0, -2.0, 0.5])
    sol = solve_markovian(_problem(piecewise3, g, zero_driver()), 200)
    np.testing.assert_allclose(sol.u, _backward_transition(piecewise3, sol.grid, g), atol=1e-9)


def test_time_only_driver_adds_its_integral(piecewise3):
    g = np.array([0.0, 1.0, 2.0])
    sol = solve_markovian(_problem(piecewise3, g, _expr(piecewise3, "cos(t)")), 200)
    want = _backward_transition(piecewise3, sol.grid, g) + (math.sin(1.0) - np.sin(sol.grid))[:, None]
    np.testing.assert_allclose(sol.u, want, atol=1e-9)


def test_affine_meanfield_driver_against_scalar_ode(piecewise3):
    # f = a y' + b: m(t) = E[Y_t] solves m' = -(a m + b), and u(t) = P(t,T)^T g + m(t) - m(T)
    a, b = 0.7, -0.4
    g = np.array([2.0, -1.0, 0.5])
    mu0 = np.array([0.2, 0.3, 0.5])
    p = _problem(piecewise3, g, _expr(piecewise3, f"{a}*yp + {b}"), mu0)
    sol = solve_markovian(p, 200)
    mT = (transition_matrix(piecewise3, 0, 1) @ mu0) @ g
    m = (mT + b / a) * np.exp(a * (1.0 - sol.grid)) - b / a
    want = _backward_transition(piecewise3, sol.grid, g) + (m - mT)[:, None]
    np.testing.assert_allclose(sol.u, want, atol=1e-9)
    assert sol.y0() == pytest.approx(m[0], abs=1e-9)


def test_linear_decay_with_state_dependent_terminal(piecewise3):
    g = np.array([1.0, 3.0, -1.0])
    sol = solve_markovian(_problem(piecewise3, g, _expr(piecewise3, "-0.8*y")), 200)
    want = np.exp(-0.8 * (1.0 - sol.grid))[:, None] * _backward_transition(piecewise3, sol.grid, g)
    np.testing.assert_allclose(sol.u, want, atol=1e-9)


def test_rk4_error_shrinks_sixteenfold():
    case = acceptance_problems()[3]
    ref = solve_markovian(case.problem, 1600).u[0]
    errs = [np.max(np.abs(solve_markovian(case.problem, K).u[0] - ref)) for K in (25, 50, 100)]
    for e1, e2 in zip(errs, errs[1:]):
        assert 12 < e1 / e2 < 20


def test_solution_csv_layout():
    case = acceptance_problems()[0]
    sol = solve_markovian(case.problem, 4)
    lines = sol.to_csv().splitlines()
    assert lines[0] == "t,state,u,mu"
    assert len(lines) == 1 + 5 * 2
    t, state, u, mu = lines[-1].split(",")
    assert float(t) == 1.0 and state == "1" and float(u) == -0.5


@pytest.mark.parametrize("case", acceptance_problems(), ids=lambda c: c.name)
def test_apriori_bound_holds(case):
    sol = solve_markovian(case.problem, 100)
    assert np.max(np.abs(sol.u)) <= apriori_bound(case.problem)


def test_meanfield_expectation_hand_value():
    f = Driver(lambda t, ip, yp, zp, i, y, z: yp * y + ip, 1.0)
    law = np.array([0.25, 0.75])
    u = np.array([2.0, 4.0])
    # sum_i' law_i' (u_i' * 3 + i') = 0.25*(6 + 0) + 0.75*(12 + 1)
    assert meanfield_expectation(law, u, u, f, 0.0, 0, 3.0, u) == pytest.approx(0.25 * 6 + 0.75 * 13)


def test_input_errors():
    gen = validate_generator([A2], 1.0)
    with pytest.raises(DimensionMismatch):
        _problem(gen, [1.0, 2.0, 3.0], zero_driver())
    with pytest.raises(NotOnSimplex):
        _problem(gen, [1.0, 2.0], zero_driver(), mu0=[0.7, 0.7])
    with pytest.raises(ValidationError):
        TerminalCondition.markovian([1.0, math.nan])
    path = MeanFieldProblem(gen, [0.5, 0.5], TerminalCondition.path_functional(lambda s: s[:, -1], 1), zero_driver())
    with pytest.raises(ValidationError):
        solve_markovian(path)


def test_blow_up_raises_nonfinite():
    gen = validate_generator([RATE1], 1.0)
    f = Driver(lambda t, ip, yp, zp, i, y, z: y ** 3 + 0 * yp, 1.0)
    with pytest.raises(NonFiniteValue), np.errstate(all="ignore"):
        solve_markovian(_problem(gen, [50.0, 50.0], f), 10)


def test_grid_check_warns_when_coarse():
    gen = validate_generator([[[-30.0, 30.0], [30.0, -30.0]]], 1.0)
    p = _problem(gen, [1.0, -1.0], zero_driver())
    with pytest.warns(GridTooCoarse):
        solve_markovian(p, 4, check_grid=True)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        solve_markovian(p, 800, check_grid=True)


def test_lipschitz_spot_check():
    gen = validate_generator([A2], 1.0)
    honest = _expr(gen, "0.5*tanh(yp) - 0.5*y", C=1.0)
    assert lipschitz_ratio(honest, gen, 300) <= 1.0
    liar = _expr(gen, "3*yp", C=1.0)
    with pytest.warns(LipschitzWarning):
        check_lipschitz(liar, gen, 300)
    snorm = _expr(gen, "snorm(z)", C=1.0)
    assert lipschitz_ratio(snorm, gen, 300) <= 1.0 + 1e-12


def test_interpolants_match_grid_values():
    case = acceptance_problems()[4]
    sol = solve_markovian(case.problem, 50)
    u_pp, F_pp = interpolants(sol, case.problem)
    np.testing.assert_allclose(u_pp(sol.grid), sol.u, atol=1e-14)
    mid = 0.5 * (sol.grid[:-1] + sol.grid[1:])
    assert np.max(np.abs(u_pp(mid) - solve_markovian(case.problem, 100).u[1::2])) < 1e-6
    assert F_pp(mid).shape == (50, 3)


@pytest.mark.parametrize("case", [c for c in acceptance_problems() if c.deterministic], ids=lambda c: c.name)
def test_deterministic_residual_is_tiny_pathwise(case):
    sol = solve_markovian(case.problem, 200)
    stats = residual_check(sol, case.problem, n_paths=5000, seed=1)
    assert stats.max_abs < 1e-8


def test_residual_detects_wrong_solution():
    case = acceptance_problems()[3]
    sol = solve_markovian(case.problem, 200)
    assert len(sol.mesh_u) == len(sol.u)  # no segment switches, mesh = output grid
    sol.mesh_u = sol.u = sol.u + 1e-3 * np.sin(np.arange(sol.u.size)).reshape(sol.u.shape)
    stats = residual_check(sol, case.problem, n_paths=20_000, seed=2, budget=1e-6)
    assert not stats.passed
    assert abs(stats.z_score) > 10


def test_residual_bias_scales_with_step():
    # the mean residual is RK4/interpolation bias, so it falls like K^-4
    case = acceptance_problems()[0]
    m = [abs(residual_check(solve_markovian(case.problem, K), case.problem, 20_000, seed=3, budget=1).mean)
         for K in (50, 100)]
    assert 8 < m[0] / m[1] < 32


def test_residual_mean_falls_from_coarse_to_fine_grid():
    case = acceptance_problems()[4]
    m = [abs(residual_check(solve_markovian(case.problem, K), case.problem, 20_000, seed=4, budget=1).mean)
         for K in (10, 100)]
    assert m[0] >= 5 * m[1]
