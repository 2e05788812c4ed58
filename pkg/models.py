"""
Domain models for the multirate integrators.

Every integrator in services/ works on the types defined here: the split problem
F(t, u) = L u + N(t, u) with its evaluation counters, forcing polynomials, Butcher
tableaus, fast IVPs, scheme definitions and study records.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

StateVector = np.ndarray

FINAL = 'final'

CSV_COLUMNS = [
    'method', 'problem', 'policy', 'H', 'h', 'm', 'q', 'r',
    'max_error', 'slow_calls', 'fast_calls', 'total_calls',
]

# all_steps: max over every macro step after t0; final_time: at t_end only
ERROR_METRICS = ('all_steps', 'final_time')


# ===== Errors =====

class MerkError(Exception):
    """Base class for every integrator and study failure"""


class ContractViolation(MerkError):
    """A precondition of an operation was broken by the caller"""


class ConfigError(ContractViolation):
    """Unknown identifier or invalid study configuration"""


class ProblemEvaluationDiverged(MerkError):
    """Problem evaluation produced a non-finite component"""

    def __init__(self, index: int, t: float):
        self.index = index
        self.t = t
        super().__init__(f"Non-finite component {index} in problem evaluation at t={t}")


class FastSolveDiverged(MerkError):
    """Inner fast solve produced a non-finite state"""

    def __init__(self, tau: float, stage: Optional[str] = None):
        self.tau = tau
        self.stage = stage
        where = f" ({stage})" if stage else ""
        super().__init__(f"Fast solve diverged at tau={tau}{where}")

    def with_stage(self, stage: str) -> 'FastSolveDiverged':
        return FastSolveDiverged(self.tau, stage)


class OracleScaleExceeded(MerkError):
    """Dense oracle called outside its supported scale"""


class SchedulingBug(MerkError):
    """A polynomial referenced a stage difference that was never produced"""


class InsufficientData(MerkError):
    """Too few rows survive the floor cutoff to fit a rate"""


class StudyRunFailed(MerkError):
    """A single run inside a study failed"""

    def __init__(self, method: str, H: float, cause: Exception):
        self.method = method
        self.H = H
        self.cause = cause
        super().__init__(f"{method} failed at H={H}: {cause}")


# ===== Counters =====

class EvalCounters:
    """Slow and fast evaluation totals; fast_duration is kept in units of H"""

    def __init__(self, slow_calls: int = 0, fast_calls: int = 0,
                 fast_duration: Fraction = Fraction(0)):
        self.slow_calls = slow_calls
        self.fast_calls = fast_calls
        self.fast_duration = Fraction(fast_duration)
        self._lock = threading.Lock()

    def add_slow(self, count: int = 1):
        with self._lock:
            self.slow_calls += count

    def add_fast(self, count: int = 1):
        with self._lock:
            self.fast_calls += count

    def add_fast_duration(self, span: Fraction):
        with self._lock:
            self.fast_duration += span

    def snapshot(self) -> 'EvalCounters':
        with self._lock:
            return EvalCounters(self.slow_calls, self.fast_calls, self.fast_duration)

    def reset(self):
        with self._lock:
            self.slow_calls = 0
            self.fast_calls = 0
            self.fast_duration = Fraction(0)

    @property
    def total_calls(self) -> int:
        return self.slow_calls + self.fast_calls

    def __sub__(self, other: 'EvalCounters') -> 'EvalCounters':
        return EvalCounters(
            self.slow_calls - other.slow_calls,
            self.fast_calls - other.fast_calls,
            self.fast_duration - other.fast_duration,
        )

    def __eq__(self, other):
        if not isinstance(other, EvalCounters):
            return NotImplemented
        return self.as_tuple() == other.as_tuple()

    def as_tuple(self):
        return (self.slow_calls, self.fast_calls, self.fast_duration)

    def __repr__(self):
        return f'<EvalCounters slow={self.slow_calls} fast={self.fast_calls} duration={self.fast_duration}>'


# ===== Split Problem =====

class SplitOdeProblem:
    """Decomposition F(t, u) = L u + N(t, u) with instrumented evaluation"""

    def __init__(self, name: str, linear_operator, nonlinear_part: Callable[[float, StateVector], StateVector],
                 t0: float, t_end: float, u0: Sequence[float], dense_L: Optional[np.ndarray] = None,
                 grid: Optional[np.ndarray] = None):
        self.name = name
        self.u0 = np.array(u0, dtype=float)
        if self.u0.ndim != 1 or self.u0.size == 0:
            raise ContractViolation("Initial condition must be a non-empty vector")
        self.u0.setflags(write=False)
        self.dimension = self.u0.shape[0]

        if linear_operator.shape != (self.dimension, self.dimension):
            raise ContractViolation(
                f"Linear operator shape {linear_operator.shape} does not match dimension {self.dimension}"
            )
        self.linear_operator = linear_operator
        if dense_L is None and isinstance(linear_operator, np.ndarray):
            dense_L = linear_operator
        self.dense_L = None if dense_L is None else np.asarray(dense_L, dtype=float)

        self._nonlinear_part = nonlinear_part
        self.t0 = float(t0)
        self.t_end = float(t_end)
        # spatial nodes of a discretized PDE, None for plain ODE systems
        self.grid = None if grid is None else np.asarray(grid, dtype=float)
        if self.grid is not None and self.grid.shape != (self.dimension,):
            raise ContractViolation(f"Grid of shape {self.grid.shape} does not match dimension {self.dimension}")
        self.counters = EvalCounters()

    def __repr__(self):
        return f'<SplitOdeProblem {self.name} d={self.dimension}>'

    def _check_state(self, u) -> StateVector:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dimension,):
            raise ContractViolation(f"State of shape {u.shape} given to {self.name} (d={self.dimension})")
        return u

    @staticmethod
    def _check_finite(value: StateVector, t: float) -> StateVector:
        finite = np.isfinite(value)
        if not finite.all():
            raise ProblemEvaluationDiverged(int(np.argmin(finite)), t)
        return value

    def linear_part(self, u: StateVector) -> StateVector:
        """L u, uncounted"""
        return self.linear_operator @ u

    def nonlinear(self, t: float, u: StateVector) -> StateVector:
        """N(t, u); counts one slow call"""
        u = self._check_state(u)
        self.counters.add_slow()
        value = np.asarray(self._nonlinear_part(t, u), dtype=float)
        return self._check_finite(value, t)

    def evaluate_full_rhs(self, t: float, u: StateVector) -> StateVector:
        """F(t, u) = L u + N(t, u); attributed to slow cost only"""
        u = self._check_state(u)
        self.counters.add_slow()
        value = self.linear_operator @ u + np.asarray(self._nonlinear_part(t, u), dtype=float)
        return self._check_finite(value, t)

    def fast_rhs(self, forcing: 'ForcingPolynomial', tau: float, y: StateVector) -> StateVector:
        """L y + forcing(tau); counts one fast call"""
        self.counters.add_fast()
        return self.linear_operator @ y + forcing(tau)

    def counters_snapshot(self) -> EvalCounters:
        return self.counters.snapshot()

    def counters_reset(self):
        self.counters.reset()


# ===== Forcing Polynomial =====

class ForcingPolynomial:
    """Vector polynomial a_0 + a_1 tau + ... + a_deg tau^deg"""

    def __init__(self, coefficients: Sequence[StateVector]):
        coefficients = np.array([np.asarray(a, dtype=float) for a in coefficients])
        if coefficients.ndim != 2 or coefficients.shape[0] == 0:
            raise ContractViolation("Forcing polynomial needs at least one vector coefficient")
        coefficients.setflags(write=False)
        self.coefficients = coefficients

    @classmethod
    def constant(cls, vector: StateVector) -> 'ForcingPolynomial':
        return cls([vector])

    @property
    def degree(self) -> int:
        return self.coefficients.shape[0] - 1

    @property
    def dimension(self) -> int:
        return self.coefficients.shape[1]

    def __call__(self, tau: float) -> StateVector:
        # Horner
        result = self.coefficients[-1]
        for a in self.coefficients[-2::-1]:
            result = result * tau + a
        return result

    def __repr__(self):
        return f'<ForcingPolynomial degree={self.degree} d={self.dimension}>'


# ===== Butcher Tableau =====

@dataclass(frozen=True)
class ButcherTableau:
    """Explicit Runge-Kutta method; rows hold the strictly lower part of A"""

    name: str
    nodes: tuple
    rows: tuple
    weights: tuple
    declared_order: int

    def __post_init__(self):
        s = len(self.nodes)
        if len(self.weights) != s or len(self.rows) != s:
            raise ContractViolation(f"Tableau {self.name}: nodes, rows and weights disagree on stage count")
        for i, row in enumerate(self.rows):
            if len(row) != i:
                raise ContractViolation(f"Tableau {self.name}: row {i} is not strictly lower triangular")
            if sum(row, Fraction(0)) != self.nodes[i]:
                raise ContractViolation(f"Tableau {self.name}: row-sum condition fails at stage {i}")
        if sum(self.weights, Fraction(0)) != 1:
            raise ContractViolation(f"Tableau {self.name}: weights do not sum to one")
        if not 2 <= self.declared_order <= 6:
            raise ContractViolation(f"Tableau {self.name}: declared order {self.declared_order} out of range")

    @classmethod
    def from_strings(cls, name: str, nodes, rows, weights, order: int) -> 'ButcherTableau':
        def frac(values):
            return tuple(Fraction(v) for v in values)
        return cls(name, frac(nodes), tuple(frac(r) for r in rows), frac(weights), order)

    @property
    def stages(self) -> int:
        return len(self.nodes)

    @cached_property
    def a_matrix(self) -> np.ndarray:
        a = np.zeros((self.stages, self.stages))
        for i, row in enumerate(self.rows):
            a[i, :i] = [float(x) for x in row]
        return a

    @cached_property
    def c_vector(self) -> np.ndarray:
        return np.array([float(x) for x in self.nodes])

    @cached_property
    def b_vector(self) -> np.ndarray:
        return np.array([float(x) for x in self.weights])


# ===== Fast IVP =====

@dataclass(frozen=True)
class FastIvp:
    """y' = L y + forcing(tau) on [0, span*H], sampled at landing fractions of H"""

    problem: SplitOdeProblem
    forcing: ForcingPolynomial
    y0: StateVector
    macro_step: float
    span: Fraction
    landing: tuple

    def __post_init__(self):
        if not self.landing:
            raise ContractViolation("Fast IVP needs at least one landing point")
        if self.macro_step <= 0:
            raise ContractViolation(f"Macro step must be positive, got {self.macro_step}")
        if any(b <= a for a, b in zip(self.landing, self.landing[1:])) or self.landing[0] <= 0:
            raise ContractViolation(f"Landing points must be positive and strictly ascending: {self.landing}")
        if self.landing[-1] != self.span:
            raise ContractViolation("Last landing point must equal the interval end")

    @property
    def landing_points(self) -> tuple:
        return tuple(float(x) * self.macro_step for x in self.landing)


# ===== Scheme Definitions =====

def _poly_mul(p: list, q: list) -> list:
    out = [Fraction(0)] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return out


def interpolation_table(nodes: dict) -> tuple:
    """Weights of the polynomial P(x) with P(0) = 0 and P(c_j) = D_j.

    nodes maps stage -> c_j. Returns a tuple indexed by power d - 1 (d >= 1),
    each entry a dict stage -> coefficient of x^d.
    """
    if not nodes:
        return ()
    table = [dict() for _ in nodes]
    for j, cj in nodes.items():
        numerator = [Fraction(0), Fraction(1)]
        denominator = cj
        for k, ck in nodes.items():
            if k == j:
                continue
            numerator = _poly_mul(numerator, [-ck, Fraction(1)])
            denominator *= cj - ck
        for d in range(1, len(numerator)):
            table[d - 1][j] = numerator[d] / denominator
    return tuple(table)


@dataclass(frozen=True)
class IvpGroup:
    """One shared fast IVP: driven by `sources`, integrated to `end`, sampled at `members`"""

    sources: tuple
    members: tuple
    end: Fraction


@dataclass(frozen=True)
class MerkScheme:
    """MERK method as data; abscissae[i - 1] is c_i"""

    name: str
    order: int
    abscissae: tuple
    ivp_groups: tuple
    final_sources: tuple
    polynomial_tables: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if not self.abscissae or self.abscissae[0] != 0:
            raise ContractViolation(f"{self.name}: first abscissa must be zero")
        produced = set()
        for index, group in enumerate(self.ivp_groups):
            missing = set(group.sources) - produced
            if missing:
                raise ContractViolation(f"{self.name}: group {index} uses stages {sorted(missing)} before they exist")
            member_c = [self.c(stage) for stage in group.members]
            if max(member_c) != group.end or any(c <= 0 for c in member_c):
                raise ContractViolation(f"{self.name}: group {index} end must be its largest member abscissa")
            produced.update(group.members)
        if produced != set(range(2, len(self.abscissae) + 1)):
            raise ContractViolation(f"{self.name}: every stage after the first must belong to one group")
        if set(self.final_sources) - produced:
            raise ContractViolation(f"{self.name}: final polynomial uses unknown stages")

        tables = {}
        for index, group in enumerate(self.ivp_groups):
            tables[index] = interpolation_table({j: self.c(j) for j in group.sources})
        tables[FINAL] = interpolation_table({j: self.c(j) for j in self.final_sources})
        object.__setattr__(self, 'polynomial_tables', tables)

    def c(self, stage: int) -> Fraction:
        return self.abscissae[stage - 1]

    @property
    def stages(self) -> int:
        return len(self.abscissae)

    @property
    def fast_duration_per_step(self) -> Fraction:
        return sum((group.end for group in self.ivp_groups), Fraction(0)) + 1

    @property
    def slow_calls_per_step(self) -> int:
        return self.stages

    def sources(self, slot) -> tuple:
        return self.final_sources if slot == FINAL else self.ivp_groups[slot].sources

    def polynomial_degree(self, slot) -> int:
        return len(self.polynomial_tables[slot])

    def describe(self) -> list:
        lines = []
        for index, group in enumerate(self.ivp_groups):
            members = ', '.join(f"U{stage}@{self.c(stage)}H" for stage in group.members)
            driven = ', '.join(f"D{j}" for j in group.sources) or 'N only'
            lines.append(f"group {index}: [0, {group.end}H] driven by {driven} -> {members}")
        driven = ', '.join(f"D{j}" for j in self.final_sources)
        lines.append(f"final: [0, H] driven by {driven}")
        return lines


@dataclass(frozen=True)
class MisScheme:
    """Multirate infinitesimal step method with an explicit outer tableau"""

    name: str
    outer: ButcherTableau
    inner: ButcherTableau

    def __post_init__(self):
        nodes = self.outer.nodes
        if any(b < a for a, b in zip(nodes, nodes[1:])) or nodes[-1] > 1:
            raise ContractViolation(f"{self.name}: outer abscissae must be non-decreasing within [0, 1]")

    @cached_property
    def extended_nodes(self) -> tuple:
        return self.outer.nodes + (Fraction(1),)

    @cached_property
    def extended_rows(self) -> tuple:
        s = self.outer.stages
        rows = [tuple(row) + (Fraction(0),) * (s - len(row)) for row in self.outer.rows]
        rows.append(tuple(self.outer.weights))
        return tuple(rows)

    def stage_span(self, stage: int) -> Fraction:
        """c_i - c_{i-1} in units of H; stage s ends at c = 1"""
        return self.extended_nodes[stage] - self.extended_nodes[stage - 1]

    def stage_increments(self, stage: int) -> tuple:
        """a_ij - a_{i-1,j}"""
        rows = self.extended_rows
        return tuple(a - b for a, b in zip(rows[stage], rows[stage - 1]))

    def tendency_weights(self, stage: int) -> tuple:
        """Weights w_ij of the fast IVP producing stage `stage`; stage 0 is u_n, stage s is u_{n+1}"""
        span = self.stage_span(stage)
        if span == 0:
            raise ContractViolation(f"{self.name}: stage {stage} has zero length and no fast IVP")
        return tuple(w / span for w in self.stage_increments(stage))

    @property
    def fast_duration_per_step(self) -> Fraction:
        return self.extended_nodes[-1] - self.extended_nodes[0]


# ===== Problems and Studies =====

@dataclass(frozen=True)
class ProblemSpec:
    """Benchmark problem descriptor"""

    id: str
    category: str
    reference_kind: str
    factory: Callable[[], SplitOdeProblem] = field(repr=False)
    default_policy: 'StepPolicy'
    default_H: tuple
    floor_cutoff: float
    description: str = ''
    # method -> macro steps, for methods whose asymptotic range differs from default_H
    method_H: dict = field(default_factory=dict, repr=False, hash=False)
    error_metric: str = 'all_steps'

    def __post_init__(self):
        if self.error_metric not in ERROR_METRICS:
            raise ConfigError(f"{self.id}: unknown error metric '{self.error_metric}'")

    def macro_steps(self, method: str) -> tuple:
        """Default macro steps for `method` on this problem"""
        return tuple(self.method_H.get(method, self.default_H))

    @property
    def policy_kind(self) -> str:
        return 'fixed_h' if self.category == 'I' else 'fixed_m'


@dataclass(frozen=True)
class StepPolicy:
    """fixed_h(h) for category I problems, fixed_m(m) for category II"""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ('fixed_h', 'fixed_m'):
            raise ConfigError(f"Unknown step policy '{self.kind}'")
        if not self.value > 0:
            raise ConfigError(f"Step policy value must be positive, got {self.value}")
        if self.kind == 'fixed_m' and (self.value != int(self.value) or self.value < 1):
            raise ConfigError(f"fixed_m needs a positive integer, got {self.value}")

    @classmethod
    def parse(cls, text: str) -> 'StepPolicy':
        kind, _, value = text.partition(':')
        try:
            return cls(kind, float(value))
        except ValueError:
            raise ConfigError(f"Invalid step policy '{text}' (expected fixed_h:VAL or fixed_m:VAL)")

    def separation(self, H: float) -> float:
        """m = H / h"""
        if self.kind == 'fixed_m':
            return int(self.value)
        m = H / self.value
        return round(m) if abs(m - round(m)) <= 1e-9 * m else m

    def micro_step(self, H: float) -> float:
        return H / self.separation(H)

    def __str__(self):
        value = int(self.value) if self.kind == 'fixed_m' else self.value
        return f"{self.kind}:{value}"


@dataclass(frozen=True)
class StudyConfig:
    """One convergence study: a method on a problem over a list of macro steps"""

    method: str
    problem: str
    policy: StepPolicy
    H_list: tuple
    q: Optional[int] = None
    r: Optional[int] = None
    output_path: Optional[str] = None
    jobs: int = 1

    def __post_init__(self):
        H_list = tuple(float(H) for H in self.H_list)
        object.__setattr__(self, 'H_list', H_list)
        if len(H_list) < 4:
            raise ConfigError(f"At least 4 macro steps are needed for rate fitting, got {len(H_list)}")
        if any(H <= 0 for H in H_list) or any(b >= a for a, b in zip(H_list, H_list[1:])):
            raise ConfigError("Macro steps must be positive and strictly descending")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be at least 1, got {self.jobs}")

    def to_dict(self):
        return {
            'method': self.method,
            'problem': self.problem,
            'policy': str(self.policy),
            'H_list': list(self.H_list),
            'q': self.q,
            'r': self.r,
            'output_path': self.output_path,
            'jobs': self.jobs,
        }


@dataclass
class ConvergenceReport:
    """Rows in CSV column order plus the fitted rate"""

    config: StudyConfig
    rows: list
    best_fit_rate: Optional[float]
    floor_cutoff: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=CSV_COLUMNS)
