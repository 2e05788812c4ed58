"""
Property suites behind `merk oracle-check`

Each check returns a dict {'name', 'passed', 'detail'}; the CLI prints one
PASS/FAIL line per check.
"""

import logging
import math
from fractions import Fraction

import numpy as np

from models import MerkError, SplitOdeProblem
from services.harness import fit_rate
from services.inner_erk import ERK33, RK4_CLASSIC, integrate_full_rhs, tableau_catalog
from services.merk_core import EXPRK_COUNTERPART, merk_step, scheme_catalog
from services.mis_baseline import MIS_KW3, mis_step
from services.phi_oracle import exact_fast_solve, expm, exprk_step, phi_functions
from services.problems import make_one_directional

logger = logging.getLogger(__name__)

ORDER_START_STEP = {2: 1 / 8, 3: 1 / 8, 4: 1 / 8, 5: 1 / 4, 6: 1 / 2}

EXPECTED_DURATION = {
    'MERK2': Fraction(3, 2),
    'MERK3': Fraction(13, 6),
    'MERK4': Fraction(17, 6),
    'MERK5': Fraction(16, 5),
}


def _result(name: str, passed: bool, detail: str) -> dict:
    return {'name': name, 'passed': bool(passed), 'detail': detail}


def random_matrix(rng: np.random.Generator, d: int, norm1: float) -> np.ndarray:
    """Random d x d matrix scaled to the given 1-norm"""
    A = rng.standard_normal((d, d))
    return A * (norm1 / np.linalg.norm(A, 1))


def random_split_problem(rng: np.random.Generator, d: int = 4) -> SplitOdeProblem:
    """Small dense problem with a genuinely nonlinear, time-dependent N"""
    L = random_matrix(rng, d, 20.0)
    weights = rng.standard_normal(d)

    def nonlinear(t, u):
        return np.sin(u) + 0.5 * np.cos(t) * weights - 0.1 * u * u

    return SplitOdeProblem('random_split', L, nonlinear, 0.0, 1.0, rng.standard_normal(d))


# ===== Phi Functions =====

def check_phi_recurrence(samples: int = 50, k_max: int = 6, seed: int = 7) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        A = random_matrix(rng, 5, rng.uniform(0.05, 1.0))
        phis = phi_functions(A, k_max)
        for k in range(1, k_max + 1):
            residual = phis[k] @ A - phis[k - 1] + np.eye(5) / math.factorial(k - 1)
            worst = max(worst, float(np.abs(residual).max()))
    return _result('phi recurrence', worst <= 1e-12, f"max residual {worst:.2e}")


def check_phi_at_zero(k_max: int = 8) -> dict:
    phis = phi_functions(np.zeros((4, 4)), k_max)
    worst = max(
        float(np.abs(phis[k] - np.eye(4) / math.factorial(k)).max()) * math.factorial(k)
        for k in range(k_max + 1)
    )
    return _result('phi_k(0) = I/k!', worst <= 1e-13, f"max scaled deviation {worst:.2e}")


def check_expm_group(samples: int = 20, seed: int = 11) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        A = random_matrix(rng, 4, rng.uniform(0.1, 2.0))
        E = expm(A)
        worst = max(worst, float(np.abs(E @ E - expm(2 * A)).max()))
    return _result('expm group property', worst <= 1e-11, f"max deviation {worst:.2e}")


# ===== Exact Fast Solve Equivalence =====

def exact_equivalence_error(scheme, problem, H: float, t_n: float = 0.0) -> float:
    """Relative gap between a MERK step with exact fast solves and the direct ExpRK step"""
    u_n = np.array(problem.u0)
    merk = merk_step(scheme, problem, ERK33, ERK33, t_n, u_n, H, 1, fast_solver=exact_fast_solve)
    direct = exprk_step(EXPRK_COUNTERPART[scheme.name], problem, t_n, u_n, H, c2=scheme.c(2))
    return float(np.linalg.norm(merk - direct) / np.linalg.norm(direct))


def check_exact_equivalence(seed: int = 3) -> list:
    rng = np.random.default_rng(seed)
    results = []
    for name, scheme in scheme_catalog().items():
        errors = [
            exact_equivalence_error(scheme, make_one_directional(), 0.01),
            exact_equivalence_error(scheme, random_split_problem(rng), 0.05, t_n=0.3),
        ]
        results.append(_result(f"exact-solve equivalence {name}", max(errors) <= 1e-12,
                               f"relative gaps {errors[0]:.2e}, {errors[1]:.2e}"))
    return results


# ===== Counters =====

def check_step_costs() -> list:
    results = []
    for name, scheme in scheme_catalog().items():
        problem = make_one_directional()
        merk_step(scheme, problem, RK4_CLASSIC, RK4_CLASSIC, 0.0, problem.u0, 0.01, 6)
        counters = problem.counters_snapshot()
        passed = (counters.fast_duration == EXPECTED_DURATION[name]
                  and counters.slow_calls == scheme.slow_calls_per_step)
        results.append(_result(f"step cost {name}", passed,
                               f"duration {counters.fast_duration}, slow calls {counters.slow_calls}"))

    problem = make_one_directional()
    mis_step(MIS_KW3, problem, 0.0, problem.u0, 0.01, 6)
    counters = problem.counters_snapshot()
    passed = counters.fast_duration == 1 and counters.slow_calls == 3
    results.append(_result('step cost MIS-KW3', passed,
                           f"duration {counters.fast_duration}, slow calls {counters.slow_calls}"))
    return results


# ===== Tableau Order =====

def _order_problem(y0: float = 1.0) -> SplitOdeProblem:
    return SplitOdeProblem('order', np.array([[-1.0]]), lambda t, u: np.array([math.sin(t)]), 0.0, 1.0, [y0])


def empirical_order(tableau, halvings: int = 4) -> float:
    """Empirical order on y' = -y + sin t, t in [0, 1]"""
    exact = (math.sin(1.0) - math.cos(1.0)) / 2 + 1.5 * math.exp(-1.0)
    rows = []
    h = ORDER_START_STEP[tableau.declared_order]
    for _ in range(halvings + 1):
        y = integrate_full_rhs(tableau, _order_problem(), [1.0], h)[0, 0]
        rows.append((h, abs(y - exact)))
        h /= 2
    return fit_rate(rows, floor_cutoff=0.0)


def check_tableau_orders() -> list:
    results = []
    for name, tableau in tableau_catalog().items():
        p = tableau.declared_order
        slope = empirical_order(tableau)
        results.append(_result(f"empirical order {name}", p - 0.2 <= slope <= p + 0.3, f"slope {slope:.3f} (order {p})"))
    return results


def run_oracle_checks() -> list:
    checks = []
    for single in (check_phi_recurrence, check_phi_at_zero, check_expm_group):
        checks.append(_guarded(single))
    for suite in (check_exact_equivalence, check_step_costs, check_tableau_orders):
        try:
            checks.extend(suite())
        except MerkError as e:
            checks.append(_result(suite.__name__, False, str(e)))
    return checks


def _guarded(check) -> dict:
    try:
        return check()
    except MerkError as e:
        logger.error(f"{check.__name__} raised {e}")
        return _result(check.__name__, False, str(e))
