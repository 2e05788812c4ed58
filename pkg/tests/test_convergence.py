"""End-to-end convergence studies on the four benchmark problems"""
from __future__ import annotations

import pytest

from config import Config
from models import StepPolicy, StudyConfig
from services.harness import REFERENCE_INNER_ORDERS, run_convergence, run_inner_order_study, run_msweep
from services.problems import get_problem_spec

pytestmark = pytest.mark.slow


def _rate(method, problem, policy, cache_dir=None):
    spec = get_problem_spec(problem)
    config = StudyConfig(method, problem, policy, spec.macro_steps(method))
    return run_convergence(config, cache_dir=cache_dir).best_fit_rate


@pytest.mark.parametrize('method, m, order', [
    ('MERK3', 50, 3),
    ('MERK4', 50, 4),
    ('MERK5', 10, 5),
    ('MIS-KW3', 25, 3),
])
def test_bi_directional_rates(method, m, order):
    assert _rate(method, 'bi_directional', StepPolicy('fixed_m', m)) == pytest.approx(order, abs=0.35)


@pytest.mark.parametrize('method, m, low, high', [
    ('MERK3', 75, 3.0, None),
    ('MERK4', 50, 4.0, None),
    ('MERK5', 25, 4.9, None),
    ('MIS-KW3', 75, 2.65, 3.35),
])
def test_one_directional_rates(method, m, low, high):
    rate = _rate(method, 'one_directional', StepPolicy('fixed_m', m))
    assert rate >= low
    if high is not None:
        assert rate <= high


@pytest.mark.parametrize('method', ['MERK3', 'MERK4', 'MERK5'])
def test_inner_order_table(method):
    table = run_inner_order_study(method)
    assert len(table) == 5
    for row in table.itertuples():
        expected = REFERENCE_INNER_ORDERS[method][(row.q, row.r)]
        assert row.observed_order == pytest.approx(expected, abs=0.25), (row.q, row.r)


@pytest.mark.parametrize('method, low', [
    ('MERK3', 2.3),
    ('MERK4', 3.3),
    ('MERK5', 3.9),
    ('MIS-KW3', 2.3),
])
def test_brusselator_rates(method, low, cache_dir):
    assert _rate(method, 'brusselator', StepPolicy('fixed_h', 1e-3), cache_dir) >= low


@pytest.mark.parametrize('method, low', [
    ('MERK3', 2.7),
    ('MERK4', 3.75),
    ('MERK5', 4.5),
    ('MIS-KW3', 2.7),
])
def test_reaction_diffusion_rates(method, low, cache_dir):
    assert _rate(method, 'reaction_diffusion', StepPolicy('fixed_h', 1e-3), cache_dir) >= low


@pytest.mark.parametrize('method, expected_m', [
    ('MERK3', 75),
    ('MERK4', 50),
    ('MERK5', 25),
    ('MIS-KW3', 75),
])
def test_msweep_selection(method, expected_m):
    grid = list(Config.MSWEEP_M_GRID)
    selected = run_msweep(method, 'one_directional')['selected_m']
    assert abs(grid.index(selected) - grid.index(expected_m)) <= 1
