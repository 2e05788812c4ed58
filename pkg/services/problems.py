"""
Benchmark problems and their reference solutions

Category I problems (reaction_diffusion, brusselator) are run with a fixed
micro step h; category II problems (one_directional, bi_directional) with a
fixed separation factor m.

References:
- one_directional: closed form
- bi_directional: exponential of the full (linear) system matrix
- reaction_diffusion, brusselator: fine Cash-Karp solve of the full right-hand
  side, cached on disk as .npz (see HARNESS.md)
"""

import hashlib
import logging
import math
import os
import tempfile
import zipfile
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse

from config import Config
from models import ConfigError, ProblemSpec, SplitOdeProblem, StepPolicy
from services.inner_erk import CASH_KARP5, integrate_full_rhs
from services.phi_oracle import expm

logger = logging.getLogger(__name__)


# ===== Reaction-Diffusion =====

REACTION_DIFFUSION_LAMBDA = 5 * math.sqrt(2)


def neumann_second_difference(n_points: int, length: float) -> sparse.csr_matrix:
    """Central second difference on n_points nodes with ghost-point Neumann rows"""
    dx = length / (n_points - 1)
    main = np.full(n_points, -2.0)
    upper = np.ones(n_points - 1)
    lower = np.ones(n_points - 1)
    upper[0] = 2.0
    lower[-1] = 2.0
    return sparse.diags([lower, main, upper], [-1, 0, 1], format='csr') / dx ** 2


def make_reaction_diffusion(n_points: int = 1000) -> SplitOdeProblem:
    """u_t = u_xx / 100 + u^2 (1 - u) on [0, 5], t in (0, 3]"""
    if n_points < 3:
        raise ConfigError(f"Reaction-diffusion needs at least 3 grid points, got {n_points}")
    x = np.linspace(0.0, 5.0, n_points)
    L = neumann_second_difference(n_points, 5.0) / 100.0
    u0 = 1.0 / (1.0 + np.exp(REACTION_DIFFUSION_LAMBDA * (x - 1.0)))

    def nonlinear(t, u):
        return u * u * (1.0 - u)

    dense_L = L.toarray() if n_points <= Config.ORACLE_MAX_DIMENSION else None
    return SplitOdeProblem('reaction_diffusion', L, nonlinear, 0.0, 3.0, u0, dense_L=dense_L, grid=x)


# ===== Brusselator =====

BRUSSELATOR_A = 1.0
BRUSSELATOR_B = 3.5
BRUSSELATOR_INV_EPS = 100.0


def make_brusselator() -> SplitOdeProblem:
    """Stiff brusselator with the stiff w-relaxation as the linear part"""
    L = np.diag([0.0, 0.0, -BRUSSELATOR_INV_EPS])
    a, b, inv_eps = BRUSSELATOR_A, BRUSSELATOR_B, BRUSSELATOR_INV_EPS

    def nonlinear(t, state):
        u, v, w = state
        return np.array([
            a - (w + 1.0) * u + u * u * v,
            w * u - u * u * v,
            b * inv_eps - u * w,
        ])

    return SplitOdeProblem('brusselator', L, nonlinear, 0.0, 2.0, [1.2, 3.1, 3.0])


# ===== One-Directional Coupling =====

ONE_DIRECTIONAL_L = np.array([
    [0.0, -50.0, 0.0],
    [50.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
])
ONE_DIRECTIONAL_MATRIX = np.array([
    [0.0, -50.0, 0.0],
    [50.0, 0.0, 0.0],
    [1.0, 1.0, -1.0],
])


def make_one_directional() -> SplitOdeProblem:
    """Fast oscillator (u, v) forcing a slowly decaying w"""

    def nonlinear(t, state):
        return np.array([0.0, 0.0, -state[2]])

    return SplitOdeProblem('one_directional', ONE_DIRECTIONAL_L.copy(), nonlinear, 0.0, 1.0, [1.0, 0.0, 2.0])


def analytic_solution_one_directional(t: float) -> np.ndarray:
    return np.array([
        math.cos(50 * t),
        math.sin(50 * t),
        5051 / 2501 * math.exp(-t) - 49 / 2501 * math.cos(50 * t) + 51 / 2501 * math.sin(50 * t),
    ])


# ===== Bi-Directional Coupling =====

BI_DIRECTIONAL_L = np.array([
    [0.0, 100.0, 0.0],
    [-100.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
])
BI_DIRECTIONAL_N = np.array([
    [0.0, 0.0, 1.0],
    [0.0, 0.0, 0.0],
    [0.0, 0.0, -1.0],
])
BI_DIRECTIONAL_MATRIX = np.array([
    [0.0, 100.0, 1.0],
    [-100.0, 0.0, 0.0],
    [1.0, 0.0, -1.0],
])


def make_bi_directional() -> SplitOdeProblem:
    """Linear system where the slow w feeds back into the fast oscillator"""

    def nonlinear(t, state):
        w = state[2]
        return np.array([w, 0.0, -w])

    u0 = [9001 / 10001, 100000 / 10001, 1000.0]
    return SplitOdeProblem('bi_directional', BI_DIRECTIONAL_L.copy(), nonlinear, 0.0, 2.0, u0)


# ===== Registry =====

_CATEGORY_I_H = (0.2, 0.1, 0.05, 0.025, 0.0125)
# MERK3, MERK5 and MIS-KW3 are still pre-asymptotic on the brusselator at H = 0.2;
# MERK4 meets the fixed-h inner floor (~7e-8) below H = 0.0125 and keeps the coarse grid
_BRUSSELATOR_FINE_H = (0.04, 0.02, 0.01, 0.005, 0.0025)

PROBLEM_SPECS = {
    'reaction_diffusion': ProblemSpec(
        id='reaction_diffusion',
        category='I',
        reference_kind='fine_rk',
        factory=make_reaction_diffusion,
        default_policy=StepPolicy('fixed_h', 1e-3),
        default_H=_CATEGORY_I_H,
        floor_cutoff=Config.FLOOR_CUTOFF_FINE,
        description='Fisher-type traveling wave, 1000 nodes, Neumann boundaries',
        # u0 misses the Neumann condition at x = 0; the boundary layer it excites
        # dominates the first steps and has decayed by t_end
        error_metric='final_time',
    ),
    'brusselator': ProblemSpec(
        id='brusselator',
        category='I',
        reference_kind='fine_rk',
        factory=make_brusselator,
        default_policy=StepPolicy('fixed_h', 1e-3),
        default_H=_CATEGORY_I_H,
        floor_cutoff=Config.FLOOR_CUTOFF_FINE,
        description='Stiff brusselator, 1/eps = 100',
        method_H={'MERK3': _BRUSSELATOR_FINE_H, 'MERK5': _BRUSSELATOR_FINE_H, 'MIS-KW3': _BRUSSELATOR_FINE_H},
    ),
    'one_directional': ProblemSpec(
        id='one_directional',
        category='II',
        reference_kind='analytic',
        factory=make_one_directional,
        default_policy=StepPolicy('fixed_m', 50),
        default_H=(0.1, 0.05, 0.025, 0.0125, 0.00625),
        floor_cutoff=Config.FLOOR_CUTOFF_EXACT,
        description='Fast oscillator driving a slow decay, closed-form solution',
    ),
    'bi_directional': ProblemSpec(
        id='bi_directional',
        category='II',
        reference_kind='expm_exact',
        factory=make_bi_directional,
        default_policy=StepPolicy('fixed_m', 50),
        default_H=(0.04, 0.02, 0.01, 0.005, 0.0025, 0.00125),
        # |w| ~ 1e3 puts the expm reference floor near 1e-12
        floor_cutoff=Config.FLOOR_CUTOFF_FINE,
        description='Linear two-way coupled system, expm reference',
    ),
}


def get_problem_spec(problem_id: str) -> ProblemSpec:
    try:
        return PROBLEM_SPECS[problem_id]
    except KeyError:
        raise ConfigError(f"Unknown problem '{problem_id}'. Available: {', '.join(PROBLEM_SPECS)}")


def make_problem(problem_id: str) -> SplitOdeProblem:
    return get_problem_spec(problem_id).factory()


# ===== References =====

def _cache_path(cache_dir: Path, problem_id: str, h_ref: float, times: np.ndarray) -> Path:
    digest = hashlib.sha1()
    digest.update(problem_id.encode())
    digest.update(repr(float(h_ref)).encode())
    digest.update(np.ascontiguousarray(times, dtype=float).tobytes())
    return cache_dir / f"{problem_id}-{digest.hexdigest()[:16]}.npz"


def _load_cached(path: Path, times: np.ndarray) -> Optional[np.ndarray]:
    """Cached states for `times`, or None when the file is missing, stale or unreadable"""
    if not path.exists():
        return None
    try:
        with np.load(path) as data:
            if np.array_equal(data['times'], times):
                logger.debug(f"Reference cache hit: {path}")
                return np.array(data['states'])
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as e:
        logger.warning(f"Ignoring unreadable reference cache {path}: {e}")
    return None


def _store_cached(path: Path, times: np.ndarray, states: np.ndarray, h_ref: float):
    """Write to a temporary file next to `path` and rename, so readers never see a partial file"""
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}-", suffix='.npz')
    try:
        with os.fdopen(handle, 'wb') as stream:
            np.savez(stream, times=times, states=states, h_ref=np.array(h_ref))
        os.replace(temp_name, path)
    except BaseException:
        Path(temp_name).unlink(missing_ok=True)
        raise


def fine_reference(spec: ProblemSpec, times, h_ref: float, cache_dir: Optional[str] = None) -> np.ndarray:
    """Cash-Karp reference at `times` with step h_ref, read from or written to the cache"""
    times = np.asarray(times, dtype=float)
    cache_dir = Path(cache_dir or Config.REFERENCE_CACHE_DIR)
    path = _cache_path(cache_dir, spec.id, h_ref, times)
    states = _load_cached(path, times)
    if states is not None:
        return states

    logger.info(f"Computing {spec.id} reference with h_ref={h_ref} over {len(times)} sample times")
    states = integrate_full_rhs(CASH_KARP5, spec.factory(), times, h_ref)
    _store_cached(path, times, states, h_ref)
    return states


def reference_trajectory(spec: ProblemSpec, times, h_ref: Optional[float] = None,
                         cache_dir: Optional[str] = None) -> np.ndarray:
    """Reference states at `times`, shape (len(times), d)"""
    times = np.asarray(times, dtype=float)
    if spec.reference_kind == 'analytic':
        return np.array([analytic_solution_one_directional(t) for t in times])
    if spec.reference_kind == 'expm_exact':
        u0 = spec.factory().u0
        return np.array([expm(t * BI_DIRECTIONAL_MATRIX) @ u0 for t in times])
    if h_ref is None:
        raise ConfigError(f"{spec.id} needs h_ref for its fine reference")
    return fine_reference(spec, times, h_ref, cache_dir)
