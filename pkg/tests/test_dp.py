import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from remsched.dp import (
    CostTable,
    HorizonSpec,
    bellman_stage_costs,
    budget_sweep,
    generic_opportunity_threshold,
    laplace_closed_form_table,
    laplace_minimal_error,
    opportunity_cost,
    opportunity_threshold,
    solve_dp,
)
from remsched.sources import Gaussian, Laplace, NumericSource, Uniform
from remsched.stage import StageProblem, one_stage_cost, solve_threshold


@pytest.fixture(scope="module")
def laplace_tables():
    spec = HorizonSpec(40, 40, Laplace(1.0), 0.5)
    return spec, *solve_dp(spec)


def test_table_shape_and_terminal_row(laplace_tables):
    spec, table, policy = laplace_tables
    assert table.values.shape == (41, 41)
    assert policy.beta.shape == (40, 41)
    assert np.all(table.values[-1] == 0.0)
    assert np.all(np.isinf(policy.beta[:, 0]))


def test_no_budget_column_is_arithmetic(laplace_tables):
    spec, table, _ = laplace_tables
    t = np.arange(1, 42)
    assert_allclose(table.values[:, 0], (spec.horizon - t + 1) * 2.0, rtol=0, atol=1e-12)


def test_cost_nonincreasing_in_budget(laplace_tables):
    _, table, _ = laplace_tables
    assert np.all(np.diff(table.values, axis=1) <= 1e-12)


def test_opportunity_cost_cases(laplace_tables):
    spec, table, _ = laplace_tables
    T = spec.horizon
    assert opportunity_cost(table, T, 3) == 0.0
    # budget exceeding the remaining steps is worthless
    for t in range(1, T):
        for E in range(T - t + 1, spec.budget + 1):
            assert opportunity_cost(table, t, E) == 0.0
    beta = solve_threshold(StageProblem(spec.source, spec.gamma, 0.0)).beta_star
    want = spec.source.variance - one_stage_cost(StageProblem(spec.source, spec.gamma, 0.0), beta)
    assert opportunity_cost(table, T - 1, 1) == pytest.approx(want, rel=1e-13)
    with pytest.raises(IndexError):
        opportunity_cost(table, 3, 0)


def test_negative_opportunity_cost_is_an_error():
    bad = CostTable(np.array([[0.0, 0.0], [1.0, 2.0], [0.0, 0.0]]))
    with pytest.raises(ArithmeticError):
        opportunity_cost(bad, 1, 1)


def test_one_step_laplace_expansion(laplace_tables):
    spec, table, _ = laplace_tables
    m = 1 / (spec.gamma + 1)
    want = 2 - 2 * (math.sqrt(m) + 1) * math.exp(-math.sqrt(m))
    assert table(spec.horizon, 1) == pytest.approx(want, rel=1e-14)


@pytest.mark.parametrize("lam,gamma", [(1.0, 0.1), (0.5, 2.0), (3.0, 25.0)])
def test_matches_explicit_update_rule(lam, gamma):
    table, _ = solve_dp(HorizonSpec(60, 45, Laplace(lam), gamma))
    oracle = laplace_closed_form_table(lam, gamma, 60, 45)
    assert_allclose(table.values, oracle.values, rtol=0, atol=1e-9)


def test_quadrature_route_matches_update_rule():
    table, _ = solve_dp(HorizonSpec(30, 30, NumericSource(Laplace(1.5)), 2.0))
    assert_allclose(table.values, laplace_closed_form_table(1.5, 2.0, 30, 30).values, rtol=0, atol=1e-9)


def test_update_rule_columns():
    oracle = laplace_closed_form_table(2.0, 1.0, 10, 4)
    assert_allclose(np.diff(oracle.values[::-1, 0]), 0.5, rtol=1e-14)


@pytest.mark.parametrize("gamma", [0.1, 1.0, 10.0])
def test_full_budget_closed_form(gamma):
    table, _ = solve_dp(HorizonSpec(100, 100, Laplace(1.0), gamma))
    assert table(1, 100) == pytest.approx(laplace_minimal_error(1.0, gamma, 100), abs=1e-8)


def test_minimal_error_values():
    assert laplace_minimal_error(1.0, 0.1, 100) == pytest.approx(49.425457284598248, rel=1e-13)
    assert laplace_minimal_error(1.0, 1.0, 100) == pytest.approx(31.655818665681813, rel=1e-13)
    assert laplace_minimal_error(1.0, 10.0, 100) == pytest.approx(7.4545588244163831, rel=1e-13)


def test_opportunity_threshold_values():
    assert opportunity_threshold(1.0, 0.1, 100) == pytest.approx(38.540421389270663, rel=1e-13)
    assert opportunity_threshold(1.0, 10.0, 100) == pytest.approx(73.969943472928090, rel=1e-13)
    assert opportunity_threshold(1.0, 1e12, 100) == pytest.approx(100, rel=1e-5)
    g = generic_opportunity_threshold(Laplace(1.0), 0.1, 100)
    assert g == pytest.approx(opportunity_threshold(1.0, 0.1, 100), rel=1e-12)


@pytest.mark.parametrize("src", [Laplace(1.0), Gaussian(1.0), Uniform(2.0)], ids=lambda s: s.family)
def test_policy_invariants(src):
    spec = HorizonSpec(30, 30, src, 0.7)
    table, policy = solve_dp(spec)
    free = solve_threshold(StageProblem(src, 0.7, 0.0)).beta_star
    b = policy.beta[:, 1:]
    assert np.all(np.abs(policy.residual[:, 1:][~policy.clamped[:, 1:]]) <= 1e-10)
    assert np.all(b >= free - 1e-10)
    # scarcer budget, higher threshold
    assert np.all(np.diff(b, axis=1) <= 1e-12)
    assert np.all(policy.opportunity_cost >= 0)
    for t in range(1, 31):
        assert_allclose(policy.beta[t - 1, 31 - t:], free, rtol=0, atol=1e-9)


@pytest.mark.parametrize("src", [Laplace(1.0), Gaussian(1.0), Uniform(2.0)], ids=lambda s: s.family)
def test_bellman_consistency(src):
    spec = HorizonSpec(20, 12, src, 1.5)
    table, policy = solve_dp(spec)
    stage = bellman_stage_costs(spec, table, policy)
    assert_allclose(table.values[:-1] - table.values[1:], stage, rtol=0, atol=1e-10)


def test_smaller_budget_reads_from_larger_table():
    big, _ = solve_dp(HorizonSpec(25, 25, Gaussian(1.0), 2.0))
    small, _ = solve_dp(HorizonSpec(25, 7, Gaussian(1.0), 2.0))
    assert_allclose(big.values[:, :8], small.values, rtol=0, atol=0)


def test_budget_sweep_properties():
    budgets, J = budget_sweep(Laplace(1.0), 0.1, 100, range(101))
    steps = J[:-1] - J[1:]
    assert J[1] < J[0]
    assert np.all(steps >= -1e-12)
    # gains shrink with every added opportunity and die out well inside the horizon
    assert np.all(np.diff(steps) <= 1e-12)
    assert np.all(steps[70:] < 1e-6)
    assert np.all(steps[: math.floor(opportunity_threshold(1.0, 0.1, 100)) - 4] > 1e-3)
    assert J[-1] == pytest.approx(laplace_minimal_error(1.0, 0.1, 100), abs=1e-9)
    b2, J2 = budget_sweep(Laplace(1.0), 0.1, 100, [5, 50])
    assert_allclose(J2, J[[5, 50]], rtol=0, atol=0)


def test_higher_snr_curve_lies_below():
    curves = [budget_sweep(Laplace(1.0), g, 60, range(61))[1] for g in (0.1, 1.0, 10.0)]
    assert np.all(curves[1] <= curves[0] + 1e-12)
    assert np.all(curves[2] <= curves[1] + 1e-12)


def test_plateau_decreasing_in_snr():
    gammas = np.geomspace(0.01, 100, 12)
    levels = [laplace_minimal_error(1.0, g, 100) for g in gammas]
    assert np.all(np.diff(levels) < 0)


def test_zero_budget_run():
    table, policy = solve_dp(HorizonSpec(10, 0, Gaussian(2.0), 1.0))
    assert table(1, 0) == pytest.approx(40.0)
    assert policy.beta.shape == (10, 1)


def test_horizon_validation():
    with pytest.raises(ValueError):
        HorizonSpec(10, 11, Laplace(1.0), 1.0)
    with pytest.raises(ValueError):
        HorizonSpec(0, 0, Laplace(1.0), 1.0)
    with pytest.raises(ValueError):
        HorizonSpec(10, 3, Laplace(1.0), -1.0)
    with pytest.raises(ValueError):
        budget_sweep(Laplace(1.0), 1.0, 10, [11])
