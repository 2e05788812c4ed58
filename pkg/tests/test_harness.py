from __future__ import annotations

import dataclasses

import numpy as np
import pandas as pd
import pytest

from models import CSV_COLUMNS, ConfigError, ContractViolation, InsufficientData, StepPolicy, StudyConfig
from services.harness import (
    default_qr_list, efficiency_table, final_abs_error, fit_rate, max_abs_error, resolve_inner_orders,
    run_convergence, run_msweep, select_m, sidecar_path,
)
from services.problems import PROBLEM_SPECS, make_reaction_diffusion

ONE_DIRECTIONAL_H = (0.1, 0.05, 0.025, 0.0125)


def _config(tmp_path=None, name='study.csv', **overrides):
    options = dict(
        method='MERK3',
        problem='one_directional',
        policy=StepPolicy('fixed_m', 10),
        H_list=ONE_DIRECTIONAL_H,
        output_path=str(tmp_path / name) if tmp_path else None,
    )
    options.update(overrides)
    return StudyConfig(**options)


# =============================================================================
# Metrics
# =============================================================================

def test_max_abs_error_skips_initial_point():
    trajectory = [(0.0, np.array([5.0, 5.0])), (0.5, np.array([1.0, 2.0])), (1.0, np.array([0.0, 0.0]))]
    reference = [[0.0, 0.0], [1.0, 2.5], [0.25, 0.0]]
    assert max_abs_error(trajectory, reference) == 0.5


def test_final_abs_error_uses_last_point():
    trajectory = [(0.0, np.array([5.0, 5.0])), (0.5, np.array([1.0, 9.0])), (1.0, np.array([0.5, 0.0]))]
    reference = [[0.0, 0.0], [1.0, 2.5], [0.25, 0.125]]
    assert final_abs_error(trajectory, reference) == 0.25


def test_max_abs_error_shape_mismatch():
    with pytest.raises(ContractViolation):
        max_abs_error([(0.0, np.zeros(2))], np.zeros((2, 2)))


def test_fit_rate_recovers_power_law():
    rows = [(H, 3.0 * H ** 4) for H in (0.1, 0.05, 0.025, 0.0125)]
    assert fit_rate(rows) == pytest.approx(4.0, abs=1e-12)


def test_fit_rate_ignores_floor_rows():
    rows = [{'H': H, 'max_error': H ** 2} for H in (0.1, 0.05, 0.025)]
    rows.append({'H': 0.0125, 'max_error': 1e-14})
    assert fit_rate(rows, floor_cutoff=1e-13) == pytest.approx(2.0, abs=1e-12)


def test_fit_rate_needs_two_points():
    with pytest.raises(InsufficientData):
        fit_rate([(0.1, 1e-3), (0.05, 1e-15)], floor_cutoff=1e-13)


# =============================================================================
# Configuration
# =============================================================================

def test_policy_parsing():
    policy = StepPolicy.parse('fixed_h:0.001')
    assert policy.kind == 'fixed_h'
    assert policy.separation(0.1) == 100
    assert isinstance(policy.separation(0.1), int)
    assert str(StepPolicy.parse('fixed_m:50')) == 'fixed_m:50'


@pytest.mark.parametrize('text', ['fixed_m:2.5', 'fixed_m:0', 'fixed_h:-1', 'fixed_h:abc', 'adaptive:1'])
def test_bad_policies(text):
    with pytest.raises(ConfigError):
        StepPolicy.parse(text)


def test_fixed_h_may_give_fractional_separation():
    assert StepPolicy('fixed_h', 0.008).separation(0.1) == pytest.approx(12.5)


@pytest.mark.parametrize('H_list, jobs', [
    ((0.1, 0.05, 0.025), 1),
    ((0.1, 0.025, 0.05, 0.0125), 1),
    ((0.1, 0.05, 0.025, 0.0), 1),
    (ONE_DIRECTIONAL_H, 0),
])
def test_invalid_study_config(H_list, jobs):
    with pytest.raises(ConfigError):
        StudyConfig('MERK3', 'one_directional', StepPolicy('fixed_m', 10), H_list, jobs=jobs)


def test_inner_order_defaults():
    assert resolve_inner_orders('MERK4') == (4, 4)
    assert resolve_inner_orders('MERK5', q=4) == (4, 5)
    assert resolve_inner_orders('MIS-KW3') == (3, 3)
    with pytest.raises(ConfigError):
        resolve_inner_orders('MIS-KW3', q=4)
    with pytest.raises(ConfigError):
        resolve_inner_orders('RK4')


def test_default_qr_pairs():
    assert default_qr_list(4) == [(3, 3), (4, 3), (3, 4), (4, 4), (5, 5)]


def test_policy_must_match_category():
    with pytest.raises(ConfigError):
        run_convergence(_config(problem='brusselator', H_list=(0.2, 0.1, 0.05, 0.025)))
    with pytest.raises(ConfigError):
        run_convergence(_config(policy=StepPolicy('fixed_h', 1e-3)))


def test_non_dividing_step_is_config_error():
    with pytest.raises(ConfigError):
        run_convergence(_config(H_list=(0.3, 0.05, 0.025, 0.0125)))


# =============================================================================
# Convergence studies
# =============================================================================

def test_report_rows_and_bookkeeping():
    report = run_convergence(_config())
    frame = report.to_frame()
    assert list(frame.columns) == CSV_COLUMNS
    assert list(frame['H']) == list(ONE_DIRECTIONAL_H)
    assert (frame['total_calls'] == frame['slow_calls'] + frame['fast_calls']).all()
    steps = 1.0 / frame['H']
    np.testing.assert_allclose(frame['slow_calls'] / steps, 3)
    assert report.best_fit_rate is not None
    assert list(efficiency_table(report).columns) == ['H', 'max_error', 'slow_calls', 'fast_calls', 'total_calls']


def test_csv_is_deterministic(tmp_path):
    run_convergence(_config(tmp_path, 'first.csv'))
    run_convergence(_config(tmp_path, 'second.csv'))
    first = (tmp_path / 'first.csv').read_bytes()
    assert first == (tmp_path / 'second.csv').read_bytes()
    assert first.decode().splitlines()[0] == ','.join(CSV_COLUMNS)


def test_sidecar_records_rate(tmp_path):
    report = run_convergence(_config(tmp_path))
    text = sidecar_path(tmp_path / 'study.csv').read_text()
    assert f"best_fit_rate: {report.best_fit_rate:.6f}" in text
    assert 'policy: fixed_m:10' in text
    keys = {line.split(':')[0] for line in text.splitlines()}
    assert keys == {'best_fit_rate', 'floor_cutoff'} | set(report.config.to_dict())


def test_parallel_runs_match_sequential():
    sequential = run_convergence(_config())
    parallel = run_convergence(_config(jobs=2))
    assert parallel.rows == sequential.rows


def test_fixed_h_fast_calls_flat_across_H(cache_dir):
    config = StudyConfig('MERK3', 'brusselator', StepPolicy('fixed_h', 1e-3), (0.2, 0.1, 0.05, 0.04))
    frame = run_convergence(config, cache_dir=cache_dir).to_frame()
    fast = frame['fast_calls']
    assert (fast.max() - fast.min()) / fast.min() < 0.05


def test_reduced_reaction_diffusion_rate_at_final_time(cache_dir, monkeypatch):
    spec = PROBLEM_SPECS['reaction_diffusion']
    reduced = dataclasses.replace(spec, factory=lambda: make_reaction_diffusion(101))
    monkeypatch.setitem(PROBLEM_SPECS, 'reaction_diffusion', reduced)
    config = StudyConfig('MERK3', 'reaction_diffusion', StepPolicy('fixed_h', 5e-3), spec.default_H[:4], q=5, r=5)
    report = run_convergence(config, cache_dir=cache_dir)
    assert report.best_fit_rate >= 2.5


# =============================================================================
# m-sweeps
# =============================================================================

def _curves(errors_by_m: dict, H_list=(0.1, 0.05, 0.025, 0.0125)) -> pd.DataFrame:
    rows = []
    for m, errors in errors_by_m.items():
        for H, error in zip(H_list, errors):
            slow = round(3 / H)
            rows.append({'m': m, 'H': H, 'max_error': error, 'slow_calls': slow, 'total_calls': slow * (1 + m)})
    return pd.DataFrame(rows)


def test_single_m_is_selected():
    selection = select_m(_curves({25: [1e-3, 1e-4, 1e-5, 1e-6]}))
    assert selection['selected_m'] == 25
    assert selection['total_choice'] == 25


def test_smallest_balanced_m_is_selected():
    curves = _curves({
        10: [4e-3, 4e-4, 4e-5, 4e-6],
        25: [1.2e-3, 1.2e-4, 1.2e-5, 1.2e-6],
        50: [1e-3, 1e-4, 1e-5, 1e-6],
    })
    assert select_m(curves)['selected_m'] == 25


def test_msweep_rejects_category_one():
    with pytest.raises(ConfigError):
        run_msweep('MERK3', 'brusselator')
