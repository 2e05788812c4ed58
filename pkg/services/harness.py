"""
Experiment harness

Convergence and efficiency studies, the inner-order study, m-sweeps with the
envelope selection rule, plus the error metric and rate fit they share.

Every run owns a fresh problem instance, so its counters only see that run.
"""

import logging
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from config import Config
from models import (
    CSV_COLUMNS, ConfigError, ContractViolation, ConvergenceReport, FastSolveDiverged,
    InsufficientData, ProblemEvaluationDiverged, StepPolicy, StudyConfig, StudyRunFailed,
)
from services.inner_erk import tableau_for_order
from services.merk_core import get_scheme, merk_integrate, step_count
from services.mis_baseline import MIS_KW3, mis_integrate
from services.problems import get_problem_spec, reference_trajectory

logger = logging.getLogger(__name__)

METHODS = ('MERK2', 'MERK3', 'MERK4', 'MERK5', 'MIS-KW3')

# Balanced separation factors for the category II problems
OPTIMAL_M = {
    'bi_directional': {'MERK2': 50, 'MERK3': 50, 'MERK4': 50, 'MERK5': 10, 'MIS-KW3': 25},
    'one_directional': {'MERK2': 75, 'MERK3': 75, 'MERK4': 50, 'MERK5': 25, 'MIS-KW3': 75},
}

# Observed orders on bi_directional by inner orders (q, r)
REFERENCE_INNER_ORDERS = {
    'MERK3': {(2, 2): 2.00, (3, 2): 2.00, (2, 3): 3.03, (3, 3): 3.03, (4, 4): 3.03},
    'MERK4': {(3, 3): 3.01, (4, 3): 3.01, (3, 4): 3.99, (4, 4): 3.99, (5, 5): 3.99},
    'MERK5': {(4, 4): 4.00, (5, 4): 4.00, (4, 5): 4.97, (5, 5): 4.97, (6, 6): 4.96},
}


# ===== Metrics =====

def max_abs_error(trajectory, reference) -> float:
    """Max over steps and components of |u_n - u_ref(t_n)|, initial point excluded"""
    states = np.array([u for _, u in trajectory], dtype=float)
    reference = np.asarray(reference, dtype=float)
    if states.shape != reference.shape:
        raise ContractViolation(f"Trajectory shape {states.shape} does not match reference {reference.shape}")
    if len(states) <= 1:
        return 0.0
    return float(np.max(np.abs(states[1:] - reference[1:])))


def final_abs_error(trajectory, reference) -> float:
    """Max over components of |u_N - u_ref(t_N)| at the last macro step"""
    states = np.array([u for _, u in trajectory], dtype=float)
    reference = np.asarray(reference, dtype=float)
    if states.shape != reference.shape:
        raise ContractViolation(f"Trajectory shape {states.shape} does not match reference {reference.shape}")
    if len(states) <= 1:
        return 0.0
    return float(np.max(np.abs(states[-1] - reference[-1])))


ERROR_METRIC_FUNCTIONS = {
    'all_steps': max_abs_error,
    'final_time': final_abs_error,
}


def _pair(row):
    if isinstance(row, Mapping):
        return float(row['H']), float(row['max_error'])
    H, error = tuple(row)[:2]
    return float(H), float(error)


def fit_rate(rows, floor_cutoff: float = Config.FLOOR_CUTOFF_EXACT) -> float:
    """Least-squares slope of log(error) against log(H), ignoring errors at or below the floor"""
    pairs = [_pair(row) for row in rows]
    kept = [(H, error) for H, error in pairs if error > floor_cutoff]
    if len(kept) < 2:
        raise InsufficientData(f"Only {len(kept)} of {len(pairs)} rows lie above the floor {floor_cutoff}")
    H, error = np.array(kept).T
    slope, _ = np.polyfit(np.log(H), np.log(error), 1)
    return float(slope)


# ===== Method Dispatch =====

def resolve_inner_orders(method: str, q: Optional[int] = None, r: Optional[int] = None) -> tuple:
    """(q, r) with defaults q = r = p; MIS-KW3 always runs its own third-order inner method"""
    if method not in METHODS:
        raise ConfigError(f"Unknown method '{method}'. Available: {', '.join(METHODS)}")
    if method == 'MIS-KW3':
        if (q is not None and q != 3) or (r is not None and r != 3):
            raise ConfigError("MIS-KW3 uses its own third-order inner method; q and r cannot change")
        return 3, 3
    order = get_scheme(method).order
    return (q or order), (r or order)


def integrate_method(method: str, problem, H: float, m: float, q: Optional[int] = None,
                     r: Optional[int] = None) -> list:
    """Trajectory of `method` on `problem` with macro step H and separation m"""
    q, r = resolve_inner_orders(method, q, r)
    if method == 'MIS-KW3':
        return mis_integrate(MIS_KW3, problem, H, m)
    return merk_integrate(get_scheme(method), problem, tableau_for_order(q), tableau_for_order(r), H, m)


# ===== Convergence Studies =====

def _macro_times(problem, H: float) -> list:
    return [problem.t0 + n * H for n in range(step_count(problem, H) + 1)]


def _time_key(t: float) -> float:
    return round(t, 12)


class _ReferenceProvider:
    """Reference states at macro grid points; fine references are solved once for all H"""

    def __init__(self, spec, times_by_H: dict, h_ref: Optional[float], cache_dir: Optional[str]):
        self.spec = spec
        self.cache_dir = cache_dir
        self.h_ref = h_ref
        self._lookup = None
        if spec.reference_kind == 'fine_rk':
            keys = sorted({_time_key(t) for times in times_by_H.values() for t in times})
            states = reference_trajectory(spec, keys, h_ref, cache_dir)
            self._lookup = dict(zip(keys, states))

    def at(self, times) -> np.ndarray:
        if self._lookup is not None:
            return np.array([self._lookup[_time_key(t)] for t in times])
        return reference_trajectory(self.spec, times)


def _validate(config: StudyConfig):
    spec = get_problem_spec(config.problem)
    q, r = resolve_inner_orders(config.method, config.q, config.r)
    if config.policy.kind != spec.policy_kind:
        raise ConfigError(
            f"{spec.id} is a category {spec.category} problem and needs a {spec.policy_kind} policy, "
            f"got {config.policy}"
        )
    sample = spec.factory()
    times_by_H = {}
    for H in config.H_list:
        try:
            times_by_H[H] = _macro_times(sample, H)
        except ContractViolation as e:
            raise ConfigError(str(e))
        if config.policy.separation(H) < 1:
            raise ConfigError(f"Micro step {config.policy.value} exceeds macro step {H}")
    return spec, q, r, times_by_H


def _run_one(config: StudyConfig, spec, q: int, r: int, H: float, times, references: _ReferenceProvider) -> dict:
    problem = spec.factory()
    m = config.policy.separation(H)
    logger.info(f"{config.method} on {spec.id}: H={H}, m={m}, q={q}, r={r}")
    try:
        trajectory = integrate_method(config.method, problem, H, m, q, r)
    except (FastSolveDiverged, ProblemEvaluationDiverged) as e:
        logger.error(f"{config.method} diverged on {spec.id} at H={H}: {e}")
        raise StudyRunFailed(config.method, H, e) from e
    counters = problem.counters_snapshot()
    return {
        'method': config.method,
        'problem': spec.id,
        'policy': config.policy.kind,
        'H': H,
        'h': H / m,
        'm': m,
        'q': q,
        'r': r,
        'max_error': ERROR_METRIC_FUNCTIONS[spec.error_metric](trajectory, references.at(times)),
        'slow_calls': counters.slow_calls,
        'fast_calls': counters.fast_calls,
        'total_calls': counters.total_calls,
    }


def run_convergence(config: StudyConfig, cache_dir: Optional[str] = None) -> ConvergenceReport:
    """Integrate once per H, measure error and cost, fit the convergence rate

    Writes the CSV and its sidecar when config.output_path is set.
    """
    spec, q, r, times_by_H = _validate(config)
    h_ref = None
    if spec.reference_kind == 'fine_rk':
        h_ref = min(config.policy.micro_step(H) for H in config.H_list) / Config.REFERENCE_REFINEMENT
    references = _ReferenceProvider(spec, times_by_H, h_ref, cache_dir)

    def job(H):
        return _run_one(config, spec, q, r, H, times_by_H[H], references)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(job, config.H_list))
    else:
        rows = [job(H) for H in config.H_list]
    rows.sort(key=lambda row: -row['H'])

    try:
        rate = fit_rate(rows, spec.floor_cutoff)
    except InsufficientData as e:
        logger.warning(f"No rate for {config.method} on {spec.id}: {e}")
        rate = None

    report = ConvergenceReport(config, rows, rate, spec.floor_cutoff)
    if config.output_path:
        write_report_csv(report, config.output_path)
        write_sidecar(report, config.output_path)
    return report


def efficiency_table(report: ConvergenceReport) -> pd.DataFrame:
    """Error against slow calls and against total calls"""
    return report.to_frame()[['H', 'max_error', 'slow_calls', 'fast_calls', 'total_calls']]


# ===== Output =====

def write_report_csv(report: ConvergenceReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.to_frame().to_csv(path, index=False, columns=CSV_COLUMNS, float_format='%.17g', lineterminator='\n')
    return path


def sidecar_path(path) -> Path:
    return Path(path).with_suffix('.meta.txt')


def write_sidecar(report: ConvergenceReport, path) -> Path:
    """best_fit_rate, floor_cutoff and the study configuration as key: value lines"""
    target = sidecar_path(path)
    rate = 'n/a' if report.best_fit_rate is None else f"{report.best_fit_rate:.6f}"
    lines = [f"best_fit_rate: {rate}", f"floor_cutoff: {report.floor_cutoff:g}"]
    lines += [f"{key}: {value}" for key, value in report.config.to_dict().items()]
    target.write_text('\n'.join(lines) + '\n')
    return target


# ===== Inner-Order Study =====

def default_qr_list(order: int) -> list:
    return [(order - 1, order - 1), (order, order - 1), (order - 1, order), (order, order), (order + 1, order + 1)]


def run_inner_order_study(method: str, problem: str = 'bi_directional', qr_list=None, m: Optional[int] = None,
                          H_list=None, jobs: int = 1, cache_dir: Optional[str] = None) -> pd.DataFrame:
    """Observed order for each inner-order pair (q, r)"""
    if method == 'MIS-KW3':
        raise ConfigError("The inner-order study applies to MERK methods only")
    scheme = get_scheme(method)
    spec = get_problem_spec(problem)
    qr_list = qr_list or default_qr_list(scheme.order)
    H_list = tuple(H_list or spec.macro_steps(method))
    if spec.category == 'II':
        policy = StepPolicy('fixed_m', m or OPTIMAL_M.get(problem, {}).get(method, spec.default_policy.value))
    else:
        policy = spec.default_policy

    table = []
    for q, r in qr_list:
        config = StudyConfig(method, problem, policy, H_list, q=q, r=r, jobs=jobs)
        report = run_convergence(config, cache_dir=cache_dir)
        table.append({'method': method, 'q': q, 'r': r, 'observed_order': report.best_fit_rate})
    return pd.DataFrame(table, columns=['method', 'q', 'r', 'observed_order'])


# ===== m-Sweep =====

def _slow_choice(errors: pd.DataFrame, factor: float) -> int:
    """Smallest m within factor of the best error at every H (equal slow cost per H)"""
    best = errors.min(axis=1)
    for m in errors.columns:
        if (errors[m] <= factor * best).all():
            return m
    return errors.columns[-1]


def _total_choice(curves: pd.DataFrame, factor: float) -> int:
    """Largest m whose error-vs-total-calls curve stays within factor of the envelope"""
    logs = {}
    for m, group in curves.groupby('m'):
        group = group.sort_values('total_calls')
        logs[m] = (np.log(group['total_calls'].to_numpy(float)), np.log(group['max_error'].to_numpy(float)))

    efficient = []
    for m, (x, y) in logs.items():
        within = True
        for point_x, point_y in zip(x, y):
            envelope = point_y
            for other, (ox, oy) in logs.items():
                if other != m and ox[0] <= point_x <= ox[-1]:
                    envelope = min(envelope, float(np.interp(point_x, ox, oy)))
            if point_y > envelope + np.log(factor):
                within = False
                break
        if within:
            efficient.append(m)
    return max(efficient) if efficient else min(logs)


def select_m(curves: pd.DataFrame, factor: float = Config.MSWEEP_ENVELOPE_FACTOR) -> dict:
    """Apply the envelope rule to both efficiency views; the slow-call view decides on disagreement"""
    errors = curves.pivot(index='H', columns='m', values='max_error').sort_index(axis=1)
    slow = _slow_choice(errors, factor)
    total = _total_choice(curves, factor)
    if slow != total:
        logger.warning(f"m-sweep views disagree: slow-call view picks m={slow}, total-call view m={total}; using m={slow}")
    return {'selected_m': int(slow), 'slow_choice': int(slow), 'total_choice': int(total)}


def run_msweep(method: str, problem: str, m_list=None, H_list=None, jobs: int = 1,
               output_path: Optional[str] = None, cache_dir: Optional[str] = None) -> dict:
    """Per-m efficiency curves and the selected separation factor"""
    spec = get_problem_spec(problem)
    if spec.category != 'II':
        raise ConfigError(f"m-sweeps need a category II problem, {problem} is category {spec.category}")
    m_list = sorted(int(m) for m in (m_list or Config.MSWEEP_M_GRID))
    H_list = tuple(H_list or spec.macro_steps(method))

    frames = []
    for m in m_list:
        config = StudyConfig(method, problem, StepPolicy('fixed_m', m), H_list, jobs=jobs)
        frames.append(run_convergence(config, cache_dir=cache_dir).to_frame())
    curves = pd.concat(frames, ignore_index=True)

    selection = select_m(curves)
    if output_path:
        path = Path(output_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        curves.to_csv(path, index=False, columns=CSV_COLUMNS, float_format='%.17g', lineterminator='\n')
    logger.info(f"m-sweep {method} on {problem}: selected m={selection['selected_m']}")
    return {'curves': curves, **selection}
