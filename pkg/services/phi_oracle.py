"""
Dense matrix exponential and phi-functions for small problems.

Ground truth only: the exact solution of a linear IVP with polynomial forcing,
and direct exponential Runge-Kutta steps evaluated with matrix functions. A MERK
step whose fast solves are exact reproduces exprk_step to rounding error.

The production integrators never call this module; it refuses matrices larger
than Config.ORACLE_MAX_DIMENSION.
"""

import logging
from fractions import Fraction
from math import factorial

import numpy as np
from scipy import linalg

from config import Config
from models import (
    ConfigError, ContractViolation, FastIvp, ForcingPolynomial, OracleScaleExceeded,
    SplitOdeProblem, StateVector,
)

logger = logging.getLogger(__name__)

EXPRK_SCHEMES = ('expRK2', 'expRK3', 'expRK4s6', 'expRK5s10')

# Abscissae of the stiffly accurate schemes underlying MERK3, MERK4 and MERK5
EXPRK3_NODES = {2: Fraction(1, 2), 3: Fraction(2, 3)}
EXPRK4_NODES = {2: Fraction(1, 2), 3: Fraction(1, 2), 4: Fraction(1, 3), 5: Fraction(5, 6), 6: Fraction(1, 3)}
EXPRK5_NODES = {
    2: Fraction(1, 2), 3: Fraction(1, 2), 4: Fraction(1, 3), 5: Fraction(1, 2), 6: Fraction(1, 3),
    7: Fraction(1, 4), 8: Fraction(7, 10), 9: Fraction(1, 2), 10: Fraction(2, 3),
}


def _check_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractViolation(f"Oracle needs a square matrix, got shape {A.shape}")
    if A.shape[0] > Config.ORACLE_MAX_DIMENSION:
        raise OracleScaleExceeded(
            f"Dimension {A.shape[0]} exceeds oracle limit {Config.ORACLE_MAX_DIMENSION}"
        )
    if not np.isfinite(A).all():
        raise ContractViolation("Oracle matrix has non-finite entries")
    return A


def expm(A) -> np.ndarray:
    """e^A by Pade scaling and squaring"""
    return linalg.expm(_check_matrix(A))


def phi_functions(A, k_max: int) -> list:
    """[phi_0(A), ..., phi_kmax(A)] from one exponential of the augmented block matrix

    [[A, I, 0, ...], [0, 0, I, ...], ..., [0, ..., 0]] has first block row
    [e^A, phi_1(A), ..., phi_kmax(A)] in its exponential.
    """
    A = _check_matrix(A)
    if not 0 <= k_max <= Config.PHI_MAX_ORDER:
        raise OracleScaleExceeded(f"phi order {k_max} outside 0..{Config.PHI_MAX_ORDER}")
    d = A.shape[0]
    identity = np.eye(d)
    size = (k_max + 1) * d
    augmented = np.zeros((size, size))
    augmented[:d, :d] = A
    for k in range(k_max):
        augmented[k * d:(k + 1) * d, (k + 1) * d:(k + 2) * d] = identity
    exponential = linalg.expm(augmented)
    return [exponential[:d, k * d:(k + 1) * d] for k in range(k_max + 1)]


def phi(k: int, A) -> np.ndarray:
    return phi_functions(A, k)[k]


def solve_modified_ivp_exact(L, poly: ForcingPolynomial, y0: StateVector, T: float) -> StateVector:
    """Exact y(T) for y' = L y + poly(tau), y(0) = y0

    y(T) = e^{TL} y0 + sum_j j! T^{j+1} phi_{j+1}(TL) a_j
    """
    if poly.degree > Config.ORACLE_MAX_DEGREE:
        raise OracleScaleExceeded(f"Forcing degree {poly.degree} exceeds {Config.ORACLE_MAX_DEGREE}")
    y0 = np.asarray(y0, dtype=float)
    if T == 0:
        return y0.copy()
    phis = phi_functions(T * np.asarray(L, dtype=float), poly.degree + 1)
    y = phis[0] @ y0
    for j, a in enumerate(poly.coefficients):
        y = y + factorial(j) * T ** (j + 1) * (phis[j + 1] @ a)
    return y


def exact_fast_solve(tableau, ivp: FastIvp, micro_step=None) -> dict:
    """Drop-in replacement for erk_integrate that solves every fast IVP exactly"""
    L = ivp.problem.dense_L
    if L is None:
        raise OracleScaleExceeded(f"{ivp.problem.name} has no dense linear operator")
    solution = {
        x: solve_modified_ivp_exact(L, ivp.forcing, ivp.y0, float(x) * ivp.macro_step)
        for x in ivp.landing
    }
    ivp.problem.counters.add_fast_duration(ivp.span)
    return solution


# ===== Direct ExpRK Steps =====

def _three_node_coefficients(nodes: dict, stages: tuple) -> tuple:
    """alpha, beta, gamma weights for three driving stages"""
    alpha, beta, gamma = {}, {}, {}
    for j in stages:
        others = [nodes[k] for k in stages if k != j]
        cj = nodes[j]
        denominator = cj * (cj - others[0]) * (cj - others[1])
        alpha[j] = others[0] * others[1] / denominator
        beta[j] = 2 * (others[0] + others[1]) / denominator
        gamma[j] = 6 / denominator
    return alpha, beta, gamma


class _ExpRKStep:
    """Matrix-function evaluation of one exponential Runge-Kutta step"""

    def __init__(self, problem: SplitOdeProblem, t_n: float, u_n: StateVector, H: float):
        if problem.dense_L is None:
            raise OracleScaleExceeded(f"{problem.name} has no dense linear operator")
        if H <= 0:
            raise ContractViolation(f"Macro step must be positive, got {H}")
        self.problem = problem
        self.L = problem.dense_L
        self.t_n = t_n
        self.u_n = np.asarray(u_n, dtype=float)
        self.H = H
        self.N_n = problem.nonlinear(t_n, self.u_n)
        self.F_n = self.L @ self.u_n + self.N_n
        self._phis = {}

    def phis(self, c: Fraction) -> list:
        if c not in self._phis:
            self._phis[c] = phi_functions(float(c) * self.H * self.L, 4)
        return self._phis[c]

    def stage(self, c: Fraction, terms=()) -> StateVector:
        """u_n + cH phi_1(cHL) F_n + sum_k phi_k(cHL) v_k"""
        p = self.phis(c)
        value = self.u_n + float(c) * self.H * (p[1] @ self.F_n)
        for k, v in terms:
            value = value + p[k] @ v
        return value

    def difference(self, c: Fraction, U: StateVector) -> StateVector:
        return self.problem.nonlinear(self.t_n + float(c) * self.H, U) - self.N_n


def _exprk2(step: _ExpRKStep, c2: Fraction) -> StateVector:
    H = step.H
    D2 = step.difference(c2, step.stage(c2))
    return step.stage(Fraction(1), [(2, H / float(c2) * D2)])


def _exprk3(step: _ExpRKStep) -> StateVector:
    H = step.H
    c2, c3 = EXPRK3_NODES[2], EXPRK3_NODES[3]
    D2 = step.difference(c2, step.stage(c2))
    U3 = step.stage(c3, [(2, float(Fraction(4, 9) / c2) * H * D2)])
    D3 = step.difference(c3, U3)
    return step.stage(Fraction(1), [(2, 1.5 * H * D3)])


def _exprk4s6(step: _ExpRKStep) -> StateVector:
    H = step.H
    c = {i: float(x) for i, x in EXPRK4_NODES.items()}
    D = {}
    D[2] = step.difference(EXPRK4_NODES[2], step.stage(EXPRK4_NODES[2]))
    for i in (3, 4):
        U = step.stage(EXPRK4_NODES[i], [(2, c[i] ** 2 / c[2] * H * D[2])])
        D[i] = step.difference(EXPRK4_NODES[i], U)
    for i in (5, 6):
        U = step.stage(EXPRK4_NODES[i], [
            (2, c[i] ** 2 / (c[3] - c[4]) * H * (-c[4] / c[3] * D[3] + c[3] / c[4] * D[4])),
            (3, 2 * c[i] ** 3 / (c[3] - c[4]) * H * (D[3] / c[3] - D[4] / c[4])),
        ])
        D[i] = step.difference(EXPRK4_NODES[i], U)
    return step.stage(Fraction(1), [
        (2, H / (c[5] - c[6]) * (-c[6] / c[5] * D[5] + c[5] / c[6] * D[6])),
        (3, 2 * H / (c[5] - c[6]) * (D[5] / c[5] - D[6] / c[6])),
    ])


def _exprk5s10(step: _ExpRKStep) -> StateVector:
    H = step.H
    nodes = EXPRK5_NODES
    c = {i: float(x) for i, x in nodes.items()}
    alpha, beta, gamma = {}, {}, {}
    alpha[3] = float(nodes[4] / (nodes[3] * (nodes[4] - nodes[3])))
    alpha[4] = float(nodes[3] / (nodes[4] * (nodes[3] - nodes[4])))
    beta[3] = float(2 / (nodes[3] * (nodes[3] - nodes[4])))
    beta[4] = float(2 / (nodes[4] * (nodes[3] - nodes[4])))
    for group in ((5, 6, 7), (8, 9, 10)):
        a, b, g = _three_node_coefficients(nodes, group)
        alpha.update({j: float(x) for j, x in a.items()})
        beta.update({j: float(x) for j, x in b.items()})
        gamma.update({j: float(x) for j, x in g.items()})

    def combine(weights, stages):
        return sum(weights[j] * D[j] for j in stages)

    D = {}
    D[2] = step.difference(nodes[2], step.stage(nodes[2]))
    for i in (3, 4):
        U = step.stage(nodes[i], [(2, c[i] ** 2 / c[2] * H * D[2])])
        D[i] = step.difference(nodes[i], U)
    for i in (5, 6, 7):
        U = step.stage(nodes[i], [
            (2, c[i] ** 2 * H * (alpha[3] * D[3] + alpha[4] * D[4])),
            (3, c[i] ** 3 * H * (beta[3] * D[3] - beta[4] * D[4])),
        ])
        D[i] = step.difference(nodes[i], U)
    for i in (8, 9, 10):
        U = step.stage(nodes[i], [
            (2, c[i] ** 2 * H * combine(alpha, (5, 6, 7))),
            (3, -c[i] ** 3 * H * combine(beta, (5, 6, 7))),
            (4, c[i] ** 4 * H * combine(gamma, (5, 6, 7))),
        ])
        D[i] = step.difference(nodes[i], U)
    return step.stage(Fraction(1), [
        (2, H * combine(alpha, (8, 9, 10))),
        (3, -H * combine(beta, (8, 9, 10))),
        (4, H * combine(gamma, (8, 9, 10))),
    ])


def exprk_step(scheme_id: str, problem: SplitOdeProblem, t_n: float, u_n: StateVector, H: float,
               c2: Fraction = Fraction(1, 2)) -> StateVector:
    """One step of expRK2, expRK3, expRK4s6 or expRK5s10 with exact matrix functions

    Args:
        scheme_id: one of EXPRK_SCHEMES
        c2: free abscissa of expRK2 (ignored by the other schemes)

    Returns:
        u_{n+1}
    """
    if scheme_id not in EXPRK_SCHEMES:
        raise ConfigError(f"Unknown ExpRK scheme '{scheme_id}'. Available: {', '.join(EXPRK_SCHEMES)}")
    step = _ExpRKStep(problem, t_n, u_n, H)
    if scheme_id == 'expRK2':
        return _exprk2(step, Fraction(c2))
    if scheme_id == 'expRK3':
        return _exprk3(step)
    if scheme_id == 'expRK4s6':
        return _exprk4s6(step)
    return _exprk5s10(step)
