"""
MERK schemes and the multirate stepper

A MERK step replaces every matrix-function action of a stiffly accurate
exponential Runge-Kutta stage with the numerical solution of a fast IVP

    y'(tau) = L y(tau) + p(tau),    y(0) = u_n

where p is a polynomial in tau built from N(t_n, u_n) and the slow tendency
differences D_j = N(t_n + c_j H, U_j) - N(t_n, u_n). Stages whose polynomials
coincide share one fast IVP, sampled at each member abscissa.

Every polynomial is N(t_n, u_n) + P(tau / H) where P(0) = 0 and P(c_j) = D_j over
the driving stages j; MerkScheme derives the coefficient tables from that rule.
"""

import logging
from concurrent.futures import Executor
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from config import Config
from models import (
    FINAL, ButcherTableau, ConfigError, ContractViolation, FastIvp, FastSolveDiverged,
    ForcingPolynomial, IvpGroup, MerkScheme, SchedulingBug, SplitOdeProblem, StateVector,
)
from services.inner_erk import erk_integrate

logger = logging.getLogger(__name__)

FastSolver = Callable[[ButcherTableau, FastIvp, float], dict]


def _fractions(*values) -> tuple:
    return tuple(Fraction(v) for v in values)


# ===== Scheme Catalog =====

def make_merk2(c2=Fraction(1, 2)) -> MerkScheme:
    """Second-order MERK; c2 is free in (0, 1]"""
    c2 = Fraction(c2)
    if not 0 < c2 <= 1:
        raise ConfigError(f"MERK2 abscissa c2 must lie in (0, 1], got {c2}")
    return MerkScheme(
        name='MERK2',
        order=2,
        abscissae=(Fraction(0), c2),
        ivp_groups=(IvpGroup((), (2,), c2),),
        final_sources=(2,),
    )


MERK3 = MerkScheme(
    name='MERK3',
    order=3,
    abscissae=_fractions(0, '1/2', '2/3'),
    ivp_groups=(
        IvpGroup((), (2,), Fraction(1, 2)),
        IvpGroup((2,), (3,), Fraction(2, 3)),
    ),
    final_sources=(3,),
)

MERK4 = MerkScheme(
    name='MERK4',
    order=4,
    abscissae=_fractions(0, '1/2', '1/2', '1/3', '5/6', '1/3'),
    ivp_groups=(
        IvpGroup((), (2,), Fraction(1, 2)),
        IvpGroup((2,), (3, 4), Fraction(1, 2)),
        IvpGroup((3, 4), (5, 6), Fraction(5, 6)),
    ),
    final_sources=(5, 6),
)

MERK5 = MerkScheme(
    name='MERK5',
    order=5,
    abscissae=_fractions(0, '1/2', '1/2', '1/3', '1/2', '1/3', '1/4', '7/10', '1/2', '2/3'),
    ivp_groups=(
        IvpGroup((), (2,), Fraction(1, 2)),
        IvpGroup((2,), (3, 4), Fraction(1, 2)),
        IvpGroup((3, 4), (5, 6, 7), Fraction(1, 2)),
        IvpGroup((5, 6, 7), (8, 9, 10), Fraction(7, 10)),
    ),
    final_sources=(8, 9, 10),
)

# Exponential Runge-Kutta method each scheme reduces to under exact fast solves
EXPRK_COUNTERPART = {
    'MERK2': 'expRK2',
    'MERK3': 'expRK3',
    'MERK4': 'expRK4s6',
    'MERK5': 'expRK5s10',
}


def scheme_catalog() -> dict:
    return {scheme.name: scheme for scheme in (make_merk2(), MERK3, MERK4, MERK5)}


def get_scheme(name: str, c2=None) -> MerkScheme:
    if name == 'MERK2':
        return make_merk2(c2 if c2 is not None else Fraction(1, 2))
    catalog = scheme_catalog()
    if name not in catalog:
        raise ConfigError(f"Unknown MERK scheme '{name}'. Available: {', '.join(catalog)}")
    return catalog[name]


# ===== Polynomials =====

def build_polynomial(scheme: MerkScheme, slot, N_n: StateVector, D_hat: dict, H: float) -> ForcingPolynomial:
    """Forcing polynomial of a stage group (slot = group index) or of the final IVP (slot = FINAL)"""
    if H <= 0:
        raise ContractViolation(f"Macro step must be positive, got {H}")
    if slot not in scheme.polynomial_tables:
        raise ContractViolation(f"{scheme.name} has no polynomial slot {slot!r}")
    missing = [j for j in scheme.sources(slot) if j not in D_hat]
    if missing:
        raise SchedulingBug(f"{scheme.name} slot {slot!r} needs D for stages {missing} before they exist")

    coefficients = [N_n]
    for power, weights in enumerate(scheme.polynomial_tables[slot], start=1):
        scale = H ** power
        coefficient = np.zeros_like(N_n, dtype=float)
        for j, weight in weights.items():
            coefficient = coefficient + (float(weight) / scale) * D_hat[j]
        coefficients.append(coefficient)
    return ForcingPolynomial(coefficients)


# ===== Stepping =====

def _solve(fast_solver: FastSolver, ivp: FastIvp, tableau: ButcherTableau, h: float, context: str) -> dict:
    try:
        return fast_solver(tableau, ivp, h)
    except FastSolveDiverged as e:
        raise e.with_stage(context) from e


def merk_step(scheme: MerkScheme, problem: SplitOdeProblem, inner_stage: ButcherTableau,
              inner_final: ButcherTableau, t_n: float, u_n: StateVector, H: float, m: float,
              fast_solver: Optional[FastSolver] = None, executor: Optional[Executor] = None) -> StateVector:
    """Advance one macro step

    Args:
        inner_stage: tableau (order q) for the stage-group IVPs
        inner_final: tableau (order r) for the final IVP
        m: time-scale separation; micro step h = H / m
        fast_solver: replaces erk_integrate, e.g. with the exact oracle solve
        executor: evaluates the N calls of a group's members concurrently

    Returns:
        u_{n+1}
    """
    if H <= 0:
        raise ContractViolation(f"Macro step must be positive, got {H}")
    if m < 1:
        raise ContractViolation(f"Separation factor m must be at least 1, got {m}")
    solver = fast_solver or erk_integrate
    h = H / m
    u_n = np.asarray(u_n, dtype=float)
    N_n = problem.nonlinear(t_n, u_n)

    D_hat = {}
    for index, group in enumerate(scheme.ivp_groups):
        poly = build_polynomial(scheme, index, N_n, D_hat, H)
        landing = tuple(sorted({scheme.c(stage) for stage in group.members}))
        ivp = FastIvp(problem, poly, u_n, H, group.end, landing)
        samples = _solve(solver, ivp, inner_stage, h, f"{scheme.name} group {index}")

        def difference(stage, samples=samples):
            c = scheme.c(stage)
            return problem.nonlinear(t_n + float(c) * H, samples[c]) - N_n

        if executor is not None:
            values = list(executor.map(difference, group.members))
        else:
            values = [difference(stage) for stage in group.members]
        D_hat.update(zip(group.members, values))

    poly = build_polynomial(scheme, FINAL, N_n, D_hat, H)
    ivp = FastIvp(problem, poly, u_n, H, Fraction(1), (Fraction(1),))
    return _solve(solver, ivp, inner_final, h, f"{scheme.name} final")[Fraction(1)]


def step_count(problem: SplitOdeProblem, H: float) -> int:
    """Number of macro steps of size H covering [t0, t_end]; partial steps are rejected"""
    span = problem.t_end - problem.t0
    if span == 0:
        return 0
    if H <= 0:
        raise ContractViolation(f"Macro step must be positive, got {H}")
    n = round(span / H)
    if n < 1 or abs(n * H - span) > Config.STEP_COUNT_TOLERANCE * abs(span):
        raise ContractViolation(f"H={H} does not divide the interval [{problem.t0}, {problem.t_end}]")
    return n


def march(problem: SplitOdeProblem, H: float, advance: Callable[[float, StateVector], StateVector]) -> list:
    """[(t_n, u_n)] from repeated advance(t_n, u_n), starting at (t0, u0)"""
    n_steps = step_count(problem, H)
    u = np.array(problem.u0, dtype=float)
    trajectory = [(problem.t0, u)]
    for n in range(n_steps):
        u = advance(problem.t0 + n * H, u)
        trajectory.append((problem.t0 + (n + 1) * H, u))
    return trajectory


def merk_integrate(scheme: MerkScheme, problem: SplitOdeProblem, inner_stage: ButcherTableau,
                   inner_final: ButcherTableau, H: float, m: float, **step_options) -> list:
    """Trajectory [(t_n, u_n)] of repeated MERK steps, initial point included"""
    logger.debug(f"{scheme.name} on {problem.name}: H={H}, m={m}, "
                 f"inner=({inner_stage.name}, {inner_final.name})")

    def advance(t, u):
        return merk_step(scheme, problem, inner_stage, inner_final, t, u, H, m, **step_options)

    return march(problem, H, advance)
