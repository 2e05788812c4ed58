from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np
import pytest

from models import (
    FINAL, ConfigError, ContractViolation, FastSolveDiverged, IvpGroup, MerkScheme, SchedulingBug,
)
from services.harness import fit_rate
from services.inner_erk import ERK33, RK4_CLASSIC, tableau_for_order
from services.merk_core import (
    MERK3, MERK4, MERK5, build_polynomial, get_scheme, make_merk2, merk_integrate, merk_step, scheme_catalog,
)
from services.oracle_checks import exact_equivalence_error, random_split_problem
from services.phi_oracle import exact_fast_solve, expm
from services.problems import analytic_solution_one_directional


# =============================================================================
# Scheme definitions
# =============================================================================

@pytest.mark.parametrize('name, duration, slow', [
    ('MERK2', Fraction(3, 2), 2),
    ('MERK3', Fraction(13, 6), 3),
    ('MERK4', Fraction(17, 6), 6),
    ('MERK5', Fraction(16, 5), 10),
])
def test_scheme_costs(name, duration, slow):
    scheme = get_scheme(name)
    assert scheme.fast_duration_per_step == duration
    assert scheme.slow_calls_per_step == slow


def test_merk2_c2_family():
    assert make_merk2(Fraction(1, 3)).fast_duration_per_step == Fraction(4, 3)
    assert get_scheme('MERK2', c2=1).c(2) == 1
    with pytest.raises(ConfigError):
        make_merk2(0)
    with pytest.raises(ConfigError):
        make_merk2(Fraction(3, 2))


def test_unknown_scheme():
    with pytest.raises(ConfigError):
        get_scheme('MERK7')


def test_polynomial_degrees():
    assert [MERK4.polynomial_degree(i) for i in range(3)] == [0, 1, 2]
    assert MERK4.polynomial_degree(FINAL) == 2
    assert [MERK5.polynomial_degree(i) for i in range(4)] == [0, 1, 2, 3]
    assert MERK5.polynomial_degree(FINAL) == 3


def test_merk4_interpolation_weights():
    table = MERK4.polynomial_tables[2]
    assert table[0] == {3: Fraction(-4), 4: Fraction(9)}
    assert table[1] == {3: Fraction(12), 4: Fraction(-18)}


@pytest.mark.parametrize('scheme', list(scheme_catalog().values()), ids=lambda s: s.name)
def test_interpolation_reproduces_stage_differences(scheme):
    for slot in list(range(len(scheme.ivp_groups))) + [FINAL]:
        table = scheme.polynomial_tables[slot]
        for j in scheme.sources(slot):
            for k in scheme.sources(slot):
                value = sum(weights[j] * scheme.c(k) ** (d + 1) for d, weights in enumerate(table))
                assert value == (1 if j == k else 0)


def test_group_using_future_stage_rejected():
    with pytest.raises(ContractViolation):
        MerkScheme(
            name='broken',
            order=3,
            abscissae=(Fraction(0), Fraction(1, 2), Fraction(2, 3)),
            ivp_groups=(IvpGroup((3,), (2,), Fraction(1, 2)), IvpGroup((2,), (3,), Fraction(2, 3))),
            final_sources=(3,),
        )


def test_describe_lists_every_group():
    lines = MERK5.describe()
    assert len(lines) == 5
    assert lines[0].startswith('group 0')
    assert lines[-1].startswith('final')


# =============================================================================
# Polynomials
# =============================================================================

def test_merk3_final_polynomial():
    H = 0.1
    N_n = np.array([1.0, -2.0])
    D3 = np.array([0.3, 0.6])
    poly = build_polynomial(MERK3, FINAL, N_n, {2: np.array([5.0, 5.0]), 3: D3}, H)
    assert poly.degree == 1
    np.testing.assert_allclose(poly.coefficients[0], N_n)
    np.testing.assert_allclose(poly.coefficients[1], 3 / (2 * H) * D3, rtol=1e-15)
    np.testing.assert_allclose(poly(2 / 3 * H), N_n + D3, rtol=1e-14)


def test_zero_differences_give_constant_forcing():
    N_n = np.array([0.5, 1.5, -1.0])
    D_hat = {j: np.zeros(3) for j in range(2, 11)}
    poly = build_polynomial(MERK5, FINAL, N_n, D_hat, 0.05)
    for tau in (0.0, 0.01, 0.05):
        np.testing.assert_array_equal(poly(tau), N_n)


def test_missing_difference_is_scheduling_bug():
    with pytest.raises(SchedulingBug):
        build_polynomial(MERK4, 1, np.zeros(3), {}, 0.1)


def test_polynomial_contract():
    with pytest.raises(ContractViolation):
        build_polynomial(MERK3, 0, np.zeros(3), {}, 0.0)
    with pytest.raises(ContractViolation):
        build_polynomial(MERK3, 7, np.zeros(3), {}, 0.1)


# =============================================================================
# Steps
# =============================================================================

@pytest.mark.parametrize('name', ['MERK2', 'MERK3', 'MERK4', 'MERK5'])
@pytest.mark.parametrize('H', [0.01, 0.05, 0.1])
def test_slow_calls_per_step(name, H, one_directional):
    scheme = get_scheme(name)
    merk_step(scheme, one_directional, ERK33, ERK33, 0.0, one_directional.u0, H, 5)
    assert one_directional.counters_snapshot().slow_calls == scheme.slow_calls_per_step


@pytest.mark.parametrize('scheme', list(scheme_catalog().values()), ids=lambda s: s.name)
def test_exact_fast_solves_match_exponential_rk(scheme, one_directional, rng):
    assert exact_equivalence_error(scheme, one_directional, 0.01) <= 1e-12
    assert exact_equivalence_error(scheme, random_split_problem(rng), 0.05, t_n=0.3) <= 1e-12


@pytest.mark.parametrize('scheme', list(scheme_catalog().values()), ids=lambda s: s.name)
def test_zero_nonlinearity_gives_exponential(scheme, linear_problem, rng):
    L = rng.standard_normal((3, 3))
    problem = linear_problem(L, [1.0, -1.0, 0.5])
    u = merk_step(scheme, problem, ERK33, ERK33, 0.0, problem.u0, 0.1, 1, fast_solver=exact_fast_solve)
    np.testing.assert_allclose(u, expm(0.1 * L) @ problem.u0, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize('scheme', list(scheme_catalog().values()), ids=lambda s: s.name)
def test_constant_nonlinearity_is_exact(scheme, linear_problem):
    problem = linear_problem(np.zeros((2, 2)), [1.0, 2.0], forcing=[0.5, -0.25])
    u = merk_step(scheme, problem, ERK33, ERK33, 0.0, problem.u0, 0.2, 4)
    np.testing.assert_allclose(u, [1.1, 1.95], atol=1e-14)


def test_executor_gives_identical_steps(one_directional):
    u_serial = merk_step(MERK5, one_directional, RK4_CLASSIC, RK4_CLASSIC, 0.0, one_directional.u0, 0.02, 10)
    serial_counters = one_directional.counters_snapshot()
    one_directional.counters_reset()
    with ThreadPoolExecutor(max_workers=3) as pool:
        u_pool = merk_step(MERK5, one_directional, RK4_CLASSIC, RK4_CLASSIC, 0.0, one_directional.u0, 0.02, 10,
                           executor=pool)
    np.testing.assert_array_equal(u_serial, u_pool)
    assert one_directional.counters_snapshot() == serial_counters


def test_divergence_names_the_stage(one_directional):
    def failing(tableau, ivp, h):
        raise FastSolveDiverged(0.25)

    with pytest.raises(FastSolveDiverged) as info:
        merk_step(MERK4, one_directional, ERK33, ERK33, 0.0, one_directional.u0, 0.1, 2, fast_solver=failing)
    assert info.value.stage == 'MERK4 group 0'
    assert info.value.tau == 0.25


def test_step_contract(one_directional):
    with pytest.raises(ContractViolation):
        merk_step(MERK3, one_directional, ERK33, ERK33, 0.0, one_directional.u0, -0.1, 4)
    with pytest.raises(ContractViolation):
        merk_step(MERK3, one_directional, ERK33, ERK33, 0.0, one_directional.u0, 0.1, 0.5)


# =============================================================================
# Trajectories
# =============================================================================

def test_trajectory_grid(one_directional):
    trajectory = merk_integrate(MERK4, one_directional, RK4_CLASSIC, RK4_CLASSIC, 0.25, 10)
    assert [t for t, _ in trajectory] == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_array_equal(trajectory[0][1], one_directional.u0)
    assert one_directional.counters_snapshot().slow_calls == 4 * MERK4.slow_calls_per_step


def test_empty_interval_returns_initial_point(one_directional):
    one_directional.t_end = one_directional.t0
    trajectory = merk_integrate(MERK3, one_directional, ERK33, ERK33, 0.1, 10)
    assert len(trajectory) == 1
    assert one_directional.counters_snapshot().total_calls == 0


def test_non_dividing_step_rejected(one_directional):
    with pytest.raises(ContractViolation):
        merk_integrate(MERK3, one_directional, ERK33, ERK33, 0.3, 10)


def test_merk3_third_order_on_one_directional(one_directional):
    rows = []
    for H in (0.1, 0.05, 0.025, 0.0125):
        trajectory = merk_integrate(MERK3, one_directional, tableau_for_order(3), tableau_for_order(3), H, 50)
        error = max(np.abs(u - analytic_solution_one_directional(t)).max() for t, u in trajectory[1:])
        rows.append((H, error))
    assert fit_rate(rows) == pytest.approx(3.0, abs=0.3)
