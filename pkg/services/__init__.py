"""
Services module for the MERK integrators.
Contains the oracle, inner solvers, steppers, benchmark problems and study harness.
"""

from .phi_oracle import expm, phi, solve_modified_ivp_exact, exprk_step, exact_fast_solve
from .inner_erk import tableau_catalog, plan_micro_grid, erk_integrate, integrate_full_rhs
from .merk_core import build_polynomial, get_scheme, merk_step, merk_integrate
from .mis_baseline import MIS_KW3, mis_step, mis_integrate
from .problems import make_problem, get_problem_spec, reference_trajectory
from .harness import max_abs_error, fit_rate, run_convergence, run_inner_order_study, run_msweep

__all__ = [
    'expm', 'phi', 'solve_modified_ivp_exact', 'exprk_step', 'exact_fast_solve',
    'tableau_catalog', 'plan_micro_grid', 'erk_integrate', 'integrate_full_rhs',
    'build_polynomial', 'get_scheme', 'merk_step', 'merk_integrate',
    'MIS_KW3', 'mis_step', 'mis_integrate',
    'make_problem', 'get_problem_spec', 'reference_trajectory',
    'max_abs_error', 'fit_rate', 'run_convergence', 'run_inner_order_study', 'run_msweep',
]
