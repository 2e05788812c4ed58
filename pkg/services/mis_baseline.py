"""
Multirate infinitesimal step baseline (MIS-KW3)

Each outer stage evolves the fast system from the previous stage value with a
constant slow tendency built from the outer tableau:

    v' = L v + sum_j (a_ij - a_{i-1,j}) / (c_i - c_{i-1}) N(t_n + c_j H, U_j)

over an interval of length (c_i - c_{i-1}) H. The final row uses the weights b
with c = 1, so one step traverses [t_n, t_n + H] exactly once.
"""

import logging
from typing import Optional

import numpy as np

from models import ButcherTableau, ContractViolation, FastIvp, FastSolveDiverged, ForcingPolynomial, MisScheme
from services.inner_erk import erk_integrate
from services.merk_core import FastSolver, march

logger = logging.getLogger(__name__)

# Knoth-Wolke third-order, three-stage explicit method
KW3 = ButcherTableau.from_strings(
    'KW3',
    nodes=['0', '1/3', '3/4'],
    rows=[[], ['1/3'], ['-3/16', '15/16']],
    weights=['1/6', '3/10', '8/15'],
    order=3,
)


def make_mis_kw3() -> MisScheme:
    return MisScheme(name='MIS-KW3', outer=KW3, inner=KW3)


MIS_KW3 = make_mis_kw3()


def _combine(weights, values, dimension: int) -> np.ndarray:
    total = np.zeros(dimension)
    for weight, value in zip(weights, values):
        total = total + float(weight) * value
    return total


def mis_step(scheme: MisScheme, problem, t_n: float, u_n, H: float, m: float,
             fast_solver: Optional[FastSolver] = None):
    """Advance one macro step; micro step H / m inside every stage interval

    A stage with c_i = c_{i-1} has no fast interval; it takes the limit of the
    fast solve, U_i = U_{i-1} + H sum_j (a_ij - a_{i-1,j}) N_j.
    """
    if H <= 0:
        raise ContractViolation(f"Macro step must be positive, got {H}")
    if m < 1:
        raise ContractViolation(f"Separation factor m must be at least 1, got {m}")
    solver = fast_solver or erk_integrate
    nodes = scheme.extended_nodes
    h = H / m

    stage_value = np.asarray(u_n, dtype=float)
    slow = []
    for i in range(1, len(nodes)):
        slow.append(problem.nonlinear(t_n + float(nodes[i - 1]) * H, stage_value))
        span = scheme.stage_span(i)
        if span == 0:
            stage_value = stage_value + H * _combine(scheme.stage_increments(i), slow, problem.dimension)
            continue

        tendency = _combine(scheme.tendency_weights(i), slow, problem.dimension)
        ivp = FastIvp(problem, ForcingPolynomial.constant(tendency), stage_value, H, span, (span,))
        try:
            stage_value = solver(scheme.inner, ivp, h)[span]
        except FastSolveDiverged as e:
            raise e.with_stage(f"{scheme.name} stage {i + 1}") from e
    return stage_value


def mis_integrate(scheme: MisScheme, problem, H: float, m: float, **step_options) -> list:
    """Trajectory [(t_n, u_n)] of repeated MIS steps, initial point included"""
    logger.debug(f"{scheme.name} on {problem.name}: H={H}, m={m}")

    def advance(t, u):
        return mis_step(scheme, problem, t, u, H, m, **step_options)

    return march(problem, H, advance)
