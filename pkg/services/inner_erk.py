"""
Inner explicit Runge-Kutta engine

Solves the fast IVPs y' = L y + p(tau) of a MERK or MIS step with a fixed-step
explicit method. Steps never straddle a landing point, so every sample the
outer method needs is an exact step boundary and nothing is interpolated.

Also hosts the tableau catalog (orders 2 to 6) and a plain fixed-step solver
for the full right-hand side, used for fine reference solutions and empirical order checks.
"""

import logging
import math

import numpy as np

from models import (
    ButcherTableau, ConfigError, ContractViolation, FastIvp, FastSolveDiverged,
    ProblemEvaluationDiverged, SplitOdeProblem, StateVector,
)

logger = logging.getLogger(__name__)

# Tolerance when deciding how many steps fit in a subinterval
_CEIL_SLACK = 1e-9


# ===== Tableau Catalog =====

HEUN2 = ButcherTableau.from_strings(
    'Heun2',
    nodes=['0', '1'],
    rows=[[], ['1']],
    weights=['1/2', '1/2'],
    order=2,
)

ERK33 = ButcherTableau.from_strings(
    'ERK33',
    nodes=['0', '1/2', '1'],
    rows=[[], ['1/2'], ['-1', '2']],
    weights=['1/6', '2/3', '1/6'],
    order=3,
)

RK4_CLASSIC = ButcherTableau.from_strings(
    'RK4Classic',
    nodes=['0', '1/2', '1/2', '1'],
    rows=[[], ['1/2'], ['0', '1/2'], ['0', '0', '1']],
    weights=['1/6', '1/3', '1/3', '1/6'],
    order=4,
)

# Fifth-order weights only; the embedded fourth-order solution is unused
CASH_KARP5 = ButcherTableau.from_strings(
    'CashKarp5',
    nodes=['0', '1/5', '3/10', '3/5', '1', '7/8'],
    rows=[
        [],
        ['1/5'],
        ['3/40', '9/40'],
        ['3/10', '-9/10', '6/5'],
        ['-11/54', '5/2', '-70/27', '35/27'],
        ['1631/55296', '175/512', '575/13824', '44275/110592', '253/4096'],
    ],
    weights=['37/378', '0', '250/621', '125/594', '0', '512/1771'],
    order=5,
)

# Butcher's seven-stage sixth-order method
ORDER6 = ButcherTableau.from_strings(
    'Order6',
    nodes=['0', '1/3', '2/3', '1/3', '1/2', '1/2', '1'],
    rows=[
        [],
        ['1/3'],
        ['0', '2/3'],
        ['1/12', '1/3', '-1/12'],
        ['-1/16', '9/8', '-3/16', '-3/8'],
        ['0', '9/8', '-3/8', '-3/4', '1/2'],
        ['9/44', '-9/11', '63/44', '18/11', '0', '-16/11'],
    ],
    weights=['11/120', '0', '27/40', '27/40', '-4/15', '-4/15', '11/120'],
    order=6,
)

_CATALOG = {t.name: t for t in (HEUN2, ERK33, RK4_CLASSIC, CASH_KARP5, ORDER6)}


def tableau_catalog() -> dict:
    """Name -> tableau for the five catalog methods, in order of declared order"""
    return dict(_CATALOG)


def get_tableau(name: str) -> ButcherTableau:
    try:
        return _CATALOG[name]
    except KeyError:
        raise ConfigError(f"Unknown tableau '{name}'. Available: {', '.join(_CATALOG)}")


def tableau_for_order(order: int) -> ButcherTableau:
    for tableau in _CATALOG.values():
        if tableau.declared_order == order:
            return tableau
    raise ConfigError(f"No catalog tableau of order {order} (available 2..6)")


# ===== Micro Grid =====

def _partition(start: float, points, h_target: float) -> list:
    """[(a, b, n)] splitting [start, points[-1]] at every point into n equal steps"""
    if not h_target > 0:
        raise ContractViolation(f"Micro step must be positive, got {h_target}")
    pieces = []
    a = start
    for b in points:
        if b < a:
            raise ContractViolation(f"Landing points must be sorted, got {b} after {a}")
        n = 0 if b == a else max(1, math.ceil((b - a) / h_target - _CEIL_SLACK))
        pieces.append((a, b, n))
        a = b
    return pieces


def plan_micro_grid(interval_end: float, landing_points, h_target: float) -> list:
    """Step sizes covering [0, interval_end], landing exactly on every landing point"""
    points = list(landing_points)
    if not points:
        raise ContractViolation("Micro grid needs at least one landing point")
    if points[0] <= 0 or points[-1] > interval_end:
        raise ContractViolation(f"Landing points must lie in (0, {interval_end}]")
    if points[-1] < interval_end:
        points.append(interval_end)
    steps = []
    for a, b, n in _partition(0.0, points, h_target):
        if n:
            steps.extend([(b - a) / n] * n)
    return steps


# ===== Integration =====

def _rk_step(rhs, tableau: ButcherTableau, t: float, y: StateVector, h: float) -> StateVector:
    a, b, c = tableau.a_matrix, tableau.b_vector, tableau.c_vector
    K = np.empty((tableau.stages, y.shape[0]))
    K[0] = rhs(t, y)
    for i in range(1, tableau.stages):
        K[i] = rhs(t + c[i] * h, y + h * (a[i, :i] @ K[:i]))
    return y + h * (b @ K)


def erk_integrate(tableau: ButcherTableau, ivp: FastIvp, micro_step: float) -> dict:
    """Integrate y' = L y + forcing(tau) from y0 with steps no larger than micro_step

    Args:
        tableau: inner explicit method
        ivp: fast IVP with landing fractions of H
        micro_step: target step h; an h beyond the interval gives a single step

    Returns:
        dict landing fraction -> state at that point
    """
    problem = ivp.problem
    forcing = ivp.forcing

    def rhs(tau, y):
        return problem.fast_rhs(forcing, tau, y)

    y = np.array(ivp.y0, dtype=float)
    solution = {}
    for (a, b, n), key in zip(_partition(0.0, ivp.landing_points, micro_step), ivp.landing):
        step = (b - a) / n
        for k in range(n):
            tau = a + k * step
            y = _rk_step(rhs, tableau, tau, y, step)
            if not np.isfinite(y).all():
                raise FastSolveDiverged(tau + step)
        solution[key] = y
    problem.counters.add_fast_duration(ivp.span)
    return solution


def integrate_full_rhs(tableau: ButcherTableau, problem: SplitOdeProblem, times, h: float) -> np.ndarray:
    """Single-rate fixed-step solve of u' = L u + N(t, u), sampled exactly at `times`

    times must be ascending and start at or after problem.t0. Returns an array of
    shape (len(times), d).
    """
    times = [float(t) for t in times]
    if not times or times[0] < problem.t0:
        raise ContractViolation("Sample times must be non-empty and start at or after t0")
    u = np.array(problem.u0, dtype=float)
    states = np.empty((len(times), problem.dimension))
    for index, (a, b, n) in enumerate(_partition(problem.t0, times, h)):
        for k in range(n):
            step = (b - a) / n
            u = _rk_step(problem.evaluate_full_rhs, tableau, a + k * step, u, step)
        if not np.isfinite(u).all():
            raise ProblemEvaluationDiverged(int(np.argmin(np.isfinite(u))), b)
        states[index] = u
    return states

