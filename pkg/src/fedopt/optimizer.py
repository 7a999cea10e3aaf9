"""Energy-optimal GenQSGD parameters under time and convergence-error limits.

Variables of the epigraph problem, in order: ``K0, K_1..K_N, B, T1, T2``.
``T1`` stands in for ``max_n (C_n/F_n) K_n`` and ``T2`` for ``max_n K_n``; the
problem is then

    minimise   E(K, B)
    subject to (C_n/F_n) K_n / T1 <= 1,   K_n / T2 <= 1               (each n)
               (overhead K0 + B K0 T1) / T_max <= 1
               (c1 / (K0 sum K) + c2 T2^2 + c3 / B
                + qc sum w_n K_n^2 / sum K) / C_max <= 1

Everything but the last constraint is a GP.  Each outer iteration replaces the
two ``sum K`` denominators by their arithmetic-geometric-mean lower bound at
the previous iterate, which gives an inner-approximating GP whose solution is
feasible for the original problem and never increases the energy.

Baseline algorithms are the same problem with some variables tied or fixed;
that is expressed as a log-affine change of variables ``log x = P log w + p``.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from . import gp as gpmod
from .cost_model import AlgoParams, LearnConstants, SystemProfile, conv_error, energy_cost, time_cost
from .gp import GeometricProgram, Monomial, Posynomial

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    GENQSGD = "genqsgd"
    FEDAVG = "fedavg"
    PRSGD = "prsgd"
    PSGD = "psgd"
    FEDPAQ = "fedpaq"


class Status(str, enum.Enum):
    SOLVED = "SOLVED"
    ITERATION_LIMIT = "ITERATION_LIMIT"
    INFEASIBLE = "INFEASIBLE"
    ROUNDING_FAILED = "ROUNDING_FAILED"
    SOLVER_FAILURE = "SOLVER_FAILURE"


class Infeasible(Exception):
    """The limits admit no (strictly) feasible parameters."""


class SolverFailure(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass
class OptSpec:
    t_max: float
    c_max: float
    profile: SystemProfile
    constants: LearnConstants
    solver_tol: float = 1e-12
    outer_tol: float = 1e-10
    max_outer: int = 200
    samples_per_worker: Sequence[int] | None = None  # FedAvg ties K_n to I_n
    fedavg_max_epochs: int = 20
    # how baselines quantize: "shared" keeps the system's quantizers, so every
    # baseline is a restriction of GenQSGD; "remark2" drops quantization where
    # the baseline algorithm has none
    baseline_quantization: str = "shared"
    # lower bound on K0, K_n and B in the relaxation; 1 is the continuous
    # counterpart of positive integers, 0 leaves only positivity
    min_value: float = 1.0

    def __post_init__(self):
        if not (self.t_max > 0 and self.c_max > 0):
            raise ValueError("T_max and C_max must be positive")
        if self.constants.n_workers != self.profile.n_workers:
            raise ValueError("constants and profile disagree on the number of workers")

    @property
    def n_workers(self) -> int:
        return self.profile.n_workers

    def with_limits(self, t_max: float | None = None, c_max: float | None = None) -> "OptSpec":
        from dataclasses import replace
        return replace(self, t_max=self.t_max if t_max is None else t_max,
                       c_max=self.c_max if c_max is None else c_max)


# ---------------------------------------------------------------------------
# variable layout and mode parametrisations


def _layout(n: int):
    return {"K0": 0, "K": slice(1, n + 1), "B": n + 1, "T1": n + 2, "T2": n + 3}


def variable_names(n: int) -> list[str]:
    return ["K0", *[f"K{i}" for i in range(1, n + 1)], "B", "T1", "T2"]


@dataclass
class Parametrization:
    """``log x_full = matrix @ log w + offset``."""

    names: list[str]
    matrix: np.ndarray
    offset: np.ndarray
    groups: list[list[int]]  # full integer coordinates that share one free value
    fedavg_epochs: int | None = None

    def full(self, w) -> np.ndarray:
        return np.exp(self.matrix @ np.log(np.asarray(w, dtype=np.float64)) + self.offset)

    def reduced(self, x) -> np.ndarray:
        sol, *_ = np.linalg.lstsq(self.matrix, np.log(np.asarray(x, dtype=np.float64)) - self.offset, rcond=None)
        return np.exp(sol)

    def group_column(self, group: list[int]) -> int:
        """Reduced variable that sets the integer group ``group``."""
        return int(np.argmax(np.abs(self.matrix[group[0]])))

    def fix(self, values: dict[int, float]) -> "Parametrization":
        """Same map with reduced variables ``values`` (column -> value) held constant."""
        keep = [j for j in range(len(self.names)) if j not in values]
        offset = self.offset.copy()
        for j, v in values.items():
            offset = offset + self.matrix[:, j] * math.log(v)
        return Parametrization([self.names[j] for j in keep], self.matrix[:, keep], offset, self.groups,
                               self.fedavg_epochs)


def parametrization(mode: Mode, n: int, samples_per_worker=None, epochs: int | None = None) -> Parametrization:
    mode = Mode(mode)
    names = variable_names(n)
    full = len(names)
    lay = _layout(n)
    k_idx = list(range(1, n + 1))
    b_idx = lay["B"]
    if mode is Mode.GENQSGD:
        return Parametrization(names, np.eye(full), np.zeros(full), [[0], *[[i] for i in k_idx], [b_idx]])
    if mode is Mode.PRSGD:
        keep = [i for i in range(full) if i != b_idx]
        return Parametrization([names[i] for i in keep], np.eye(full)[:, keep], np.zeros(full),
                               [[0], *[[i] for i in k_idx]])
    if mode is Mode.PSGD:
        keep = [i for i in range(full) if i not in k_idx]
        return Parametrization([names[i] for i in keep], np.eye(full)[:, keep], np.zeros(full), [[0], [b_idx]])
    if mode is Mode.FEDPAQ:
        red = ["K0", "K", "B", "T1", "T2"]
        m = np.zeros((full, 5))
        m[0, 0] = 1
        m[k_idx, 1] = 1
        m[b_idx, 2] = 1
        m[lay["T1"], 3] = 1
        m[lay["T2"], 4] = 1
        return Parametrization(red, m, np.zeros(full), [[0], k_idx, [b_idx]])
    if mode is Mode.FEDAVG:
        if samples_per_worker is None or epochs is None:
            raise ValueError("FedAvg needs samples per worker and an epoch count")
        red = ["K0", "B", "T1", "T2"]
        m = np.zeros((full, 4))
        off = np.zeros(full)
        m[0, 0] = 1
        m[k_idx, 1] = -1
        off[k_idx] = np.log(epochs * np.asarray(samples_per_worker, dtype=float))
        m[b_idx, 1] = 1
        m[lay["T1"], 2] = 1
        m[lay["T2"], 3] = 1
        return Parametrization(red, m, off, [[0], [b_idx]], fedavg_epochs=epochs)
    raise ValueError(mode)


def mode_profile(spec: OptSpec, mode: Mode) -> SystemProfile:
    """System profile seen by ``mode``: unquantized links send float32 vectors."""
    mode = Mode(mode)
    if mode is Mode.GENQSGD or spec.baseline_quantization == "shared":
        return spec.profile
    if spec.baseline_quantization != "remark2":
        raise ValueError(f"unknown baseline quantization policy {spec.baseline_quantization!r}")
    full_bits = 32.0 * spec.constants.dimension
    if mode in (Mode.FEDAVG, Mode.PRSGD, Mode.PSGD):
        return spec.profile.with_quantization(server=(0.0, full_bits), workers=(0.0, full_bits))
    return spec.profile.with_quantization(server=(0.0, full_bits))  # FedPAQ: exact downlink only


# ---------------------------------------------------------------------------
# Equivalent epigraph problem


@dataclass
class RatioConstraint:
    """``(plain + sum_j num_j / den_j) / bound <= 1`` with posynomial parts."""

    plain: Posynomial
    ratios: list[tuple[Posynomial, Posynomial]]
    bound: float

    def evaluate(self, x) -> float:
        return (self.plain.evaluate(x) + sum(n.evaluate(x) / d.evaluate(x) for n, d in self.ratios)) / self.bound


@dataclass
class EquivalentProblem:
    variables: list[str]
    objective: Posynomial
    monomial_constraints: list[Posynomial]
    monomial_names: list[str]
    time_constraint: Posynomial  # already divided by T_max
    error_constraint: RatioConstraint

    def constraint_values(self, x) -> np.ndarray:
        vals = [c.evaluate(x) for c in self.monomial_constraints]
        vals.append(self.time_constraint.evaluate(x))
        vals.append(self.error_constraint.evaluate(x))
        return np.array(vals)

    @property
    def constraint_names(self) -> list[str]:
        return [*self.monomial_names, "time", "error"]


def build_equivalent_problem(spec: OptSpec, profile: SystemProfile | None = None) -> EquivalentProblem:
    profile = spec.profile if profile is None else profile
    c = spec.constants
    n = profile.n_workers
    names = variable_names(n)
    v = len(names)
    lay = _layout(n)
    var = [Monomial.variable(i, v) for i in range(v)]
    k0, ks, b, t1, t2 = var[0], var[1:n + 1], var[lay["B"]], var[lay["T1"]], var[lay["T2"]]

    per_round = Posynomial.from_terms([w.energy_per_cycle_unit * b * kn for w, kn in zip(profile.workers, ks)])
    fixed = profile.server.energy_per_cycle_unit + profile.server.tx_energy + sum(w.tx_energy for w in profile.workers)
    objective = (per_round + fixed) * k0

    mono, mono_names = [], []
    for i, (w, kn) in enumerate(zip(profile.workers, ks), start=1):
        mono.append(Posynomial.from_terms([w.seconds_per_cycle_unit * kn / t1]))
        mono_names.append(f"T1[{i}]")
    for i, kn in enumerate(ks, start=1):
        mono.append(Posynomial.from_terms([kn / t2]))
        mono_names.append(f"T2[{i}]")

    if spec.min_value > 0:
        for name, x in [("K0", k0), *[(f"K{i}", kn) for i, kn in enumerate(ks, start=1)], ("B", b)]:
            mono.append(Posynomial.from_terms([spec.min_value / x]))
            mono_names.append(f"min[{name}]")

    time = Posynomial.from_terms([profile.round_overhead_time * k0, b * k0 * t1]) / spec.t_max

    sum_k = Posynomial.from_terms(ks)
    weights = profile.quant_weights
    plain_terms = [c.c2 * t2**2, c.c3 / b]
    ratios = [(Posynomial.from_terms([Monomial.constant(c.c1, v)]), sum_k * k0)]
    quant_terms = [c.quant_coeff * wq * kn**2 for wq, kn in zip(weights, ks) if wq > 0]
    if quant_terms:
        ratios.append((Posynomial.from_terms(quant_terms), sum_k))
    error = RatioConstraint(Posynomial.from_terms(plain_terms), ratios, spec.c_max)
    return EquivalentProblem(names, objective, mono, mono_names, time, error)


def condense(p: Posynomial, x) -> Monomial:
    """Arithmetic-geometric-mean monomial lower bound of ``p``, tight at ``x``."""
    terms = p.terms
    values = np.array([t.evaluate(x) for t in terms])
    weights = values / values.sum()
    out = Monomial.constant(1.0, p.n_vars)
    for t, beta in zip(terms, weights):
        if beta > 0:  # (t / beta) ** beta -> 1 as beta -> 0
            out = out * (t / beta) ** beta
    return out


def _beta(problem: EquivalentProblem, x) -> np.ndarray:
    n = (len(problem.variables) - 4)
    k = np.asarray(x)[1:n + 1]
    return k / k.sum()


def build_approx_gp(spec: OptSpec, state: "IterateState", mode: Mode = Mode.GENQSGD,
                    problem: EquivalentProblem | None = None) -> GeometricProgram:
    """Inner-approximating GP at ``state.point`` (full variables), in ``mode``'s variables."""
    mode = Mode(mode)
    problem = build_equivalent_problem(spec, mode_profile(spec, mode)) if problem is None else problem
    par = state.parametrization or parametrization(mode, spec.n_workers, spec.samples_per_worker)
    err = problem.error_constraint
    approx = err.plain
    for num, den in err.ratios:
        approx = approx + num / condense(den, state.point)
    approx = approx / err.bound
    constraints = [*problem.monomial_constraints, problem.time_constraint, approx]
    names = [*problem.monomial_names, "time", "error"]
    kept, kept_names = [], []
    for c, name in zip(constraints, names):
        c = c.substitute(par.matrix, par.offset)
        if not np.any(c.exponents):
            # fixed by the mode (e.g. K_n = 1 against K_n >= 1)
            if c.evaluate(np.ones(c.n_vars)) > 1 + 1e-12:
                raise Infeasible(f"{mode.value}: constraint {name} cannot hold with the mode's fixed values")
            continue
        kept.append(c)
        kept_names.append(name)
    return GeometricProgram(list(par.names), problem.objective.substitute(par.matrix, par.offset), kept, kept_names)


@dataclass
class IterateState:
    t: int
    point: np.ndarray  # full variables
    beta: np.ndarray
    energy: float
    parametrization: Parametrization | None = field(default=None, repr=False)


def _state(t: int, point, problem: EquivalentProblem, par: Parametrization) -> IterateState:
    point = np.asarray(point, dtype=np.float64)
    return IterateState(t, point, _beta(problem, point), problem.objective.evaluate(point), par)


def find_feasible_init(spec: OptSpec, mode: Mode = Mode.GENQSGD, epochs: int | None = None,
                       rounds: int = 20, par: Parametrization | None = None, start=None) -> IterateState:
    """Strictly feasible starting point, or :class:`Infeasible`.

    Phase I minimises the largest constraint of the inner-approximating GP,
    re-condensing at each phase-I solution; any point with all approximate
    constraints below one is strictly feasible for the original problem.
    ``start`` (full variables) seeds the search instead of all-ones.
    """
    mode = Mode(mode)
    profile = mode_profile(spec, mode)
    problem = build_equivalent_problem(spec, profile)
    par = par or parametrization(mode, spec.n_workers, spec.samples_per_worker, epochs)
    w = np.ones(len(par.names)) if start is None else par.reduced(start)
    x = par.full(w)
    best = np.inf
    for _ in range(rounds):
        gp = build_approx_gp(spec, _state(0, x, problem, par), mode, problem)
        w, worst = gpmod.find_feasible(gp, init=w, tol=1e-9, target=math.log(0.5))
        x = par.full(w)
        if worst < 0:
            return _state(0, x, problem, par)
        if worst > best - 1e-9:
            break
        best = worst
    raise Infeasible(f"{mode.value}: no feasible point for T_max={spec.t_max}, C_max={spec.c_max}")


@dataclass
class OptResult:
    mode: Mode
    status: Status
    point: np.ndarray | None = None  # full continuous variables
    energy: float = math.nan
    history: list[IterateState] = field(default_factory=list)
    kkt_residual: float = math.nan
    iterations: int = 0
    integer_params: AlgoParams | None = None
    integer_energy: float = math.nan
    fedavg_epochs: int | None = None
    message: str = ""

    @property
    def params(self) -> AlgoParams | None:
        if self.point is None:
            return None
        return AlgoParams.from_vector(self.point[:-2])

    @property
    def feasible(self) -> bool:
        return self.status in (Status.SOLVED, Status.ITERATION_LIMIT)


def run_algorithm2(spec: OptSpec, mode: Mode = Mode.GENQSGD, init: IterateState | None = None,
                   epochs: int | None = None, par: Parametrization | None = None) -> OptResult:
    """Successive inner-approximation loop; returns the final point and its KKT residual.

    ``par`` overrides the mode's change of variables (used to hold some
    variables fixed); the KKT residual is then not computed.
    """
    mode = Mode(mode)
    profile = mode_profile(spec, mode)
    problem = build_equivalent_problem(spec, profile)
    custom = par is not None
    par = par or parametrization(mode, spec.n_workers, spec.samples_per_worker, epochs)
    try:
        state = init if init is not None else find_feasible_init(spec, mode, epochs, par=par)
    except Infeasible as exc:
        return OptResult(mode, Status.INFEASIBLE, message=str(exc), fedavg_epochs=epochs)
    state = _state(0, state.point, problem, par)
    history = [state]
    status = Status.ITERATION_LIMIT
    for t in range(1, spec.max_outer + 1):
        gp = build_approx_gp(spec, state, mode, problem)
        res = gpmod.solve(gp, init=par.reduced(state.point), tol=spec.solver_tol, max_newton=2000)
        if res.status is gpmod.Status.INFEASIBLE:
            raise SolverFailure(f"approximate GP {t} reported infeasible from a feasible point", history)
        new = _state(t, par.full(res.point), problem, par)
        if new.energy > state.energy or not np.all(problem.constraint_values(new.point) <= 1 + 1e-9):
            # solver precision reached: the previous iterate already solves this GP
            status = Status.SOLVED
            break
        change = abs(state.energy - new.energy) / state.energy
        state = new
        history.append(state)
        if change <= spec.outer_tol:
            status = Status.SOLVED
            break
    residual = math.nan if custom else kkt_residual(state.point, spec, mode, epochs)
    return OptResult(mode, status, state.point, state.energy, history, residual, len(history) - 1,
                     fedavg_epochs=epochs)


# ---------------------------------------------------------------------------
# verification


def _problem3_log_functions(spec: OptSpec, mode: Mode, epochs=None):
    """``w -> [log E, log g_1, ..., log g_m]`` of the original (non-GP) problem in log variables.

    Written with plain arithmetic so complex-step differentiation applies.
    """
    profile = mode_profile(spec, mode)
    par = parametrization(mode, spec.n_workers, spec.samples_per_worker, epochs)
    c = spec.constants
    n = profile.n_workers
    spc = profile.worker_array("seconds_per_cycle_unit")
    epc = profile.worker_array("energy_per_cycle_unit")
    fixed_e = profile.server.energy_per_cycle_unit + profile.server.tx_energy + sum(w.tx_energy for w in profile.workers)
    overhead = profile.round_overhead_time
    wq = profile.quant_weights

    def funcs(z):
        x = np.exp(par.matrix @ z + par.offset)
        k0, k, b, t1, t2 = x[0], x[1:n + 1], x[n + 1], x[n + 2], x[n + 3]
        energy = k0 * (b * np.sum(epc * k) + fixed_e)
        cons = [spc * k / t1, k / t2]
        if spec.min_value > 0:
            cons.append(spec.min_value / np.concatenate([[k0], k, [b]]))
        cons += [[(overhead * k0 + b * k0 * t1) / spec.t_max],
                [(c.c1 / (k0 * np.sum(k)) + c.c2 * t2**2 + c.c3 / b
                  + c.quant_coeff * np.sum(wq * k**2) / np.sum(k)) / spec.c_max]]
        return np.log(np.concatenate([[energy], *cons]))

    return funcs, par


def _complex_step_jacobian(func, z: np.ndarray, h: float = 1e-30) -> np.ndarray:
    cols = []
    for i in range(z.size):
        dz = np.zeros(z.size, dtype=complex)
        dz[i] = 1j * h
        cols.append(np.imag(func(z + dz)) / h)
    return np.array(cols).T


def kkt_residual(point, spec: OptSpec, mode: Mode = Mode.GENQSGD, epochs: int | None = None,
                 active_tol: float = 1e-7) -> float:
    """First-order KKT residual of the original problem at a feasible ``point``.

    Uses log-variables and log-functions.  Multipliers of constraints with
    ``log g >= -active_tol`` come from nonnegative least squares; the result is
    ``|grad log E + sum lambda grad log g| / (1 + |grad log E|)`` plus the
    complementary-slackness violation ``sum lambda |log g|`` plus any
    constraint violation.
    """
    point = np.asarray(point, dtype=np.float64)
    if np.any(point <= 0):
        raise ValueError("point must be strictly positive")
    funcs, par = _problem3_log_functions(spec, Mode(mode), epochs)
    z = np.log(par.reduced(point))
    vals = funcs(z).real
    jac = _complex_step_jacobian(funcs, z)
    grad_f, grad_g, g = jac[0], jac[1:], vals[1:]
    active = g >= -active_tol
    lam = np.zeros(g.size)
    if np.any(active):
        lam[active], _ = nnls(grad_g[active].T, -grad_f)
    stationarity = np.linalg.norm(grad_f + lam @ grad_g) / (1 + np.linalg.norm(grad_f))
    slackness = float(np.sum(lam * np.abs(g)))
    violation = float(np.sum(np.maximum(g, 0)))
    return float(stationarity + slackness + violation)


# ---------------------------------------------------------------------------
# integer recovery


def _integer_params(values: dict[int, float], par: Parametrization, spec: OptSpec) -> AlgoParams:
    n = spec.n_workers
    full = np.ones(n + 2)
    for g in par.groups:
        for i in g:
            full[i] = values[g[0]]
    if par.fedavg_epochs is not None:
        b = full[n + 1]
        full[1:n + 1] = np.ceil(par.fedavg_epochs * np.asarray(spec.samples_per_worker, dtype=float) / b)
    return AlgoParams(int(full[0]), [int(v) for v in full[1:n + 1]], int(full[n + 1]))


def integer_feasible(params: AlgoParams, spec: OptSpec, profile: SystemProfile) -> bool:
    return bool(time_cost(params, profile) <= spec.t_max and conv_error(params, profile, spec.constants) <= spec.c_max)


def round_to_integer(point, spec: OptSpec, mode: Mode = Mode.GENQSGD, epochs: int | None = None,
                     exhaustive_limit: int = 12, dive_gap: float = 0.01) -> AlgoParams | None:
    """Feasible integer parameters near a continuous solution (``None`` if none is found).

    First the floor/ceil neighbours of ``point`` are searched.  If that fails
    or loses more than ``dive_gap`` relative energy, a fix-and-resolve dive
    also runs: the smallest free value is fixed to its floor or ceiling,
    the iterative solver re-optimises the others, and the cheaper branch is kept.  The
    lower-energy result of the two searches is returned.
    """
    mode = Mode(mode)
    profile = mode_profile(spec, mode)
    par = parametrization(mode, spec.n_workers, spec.samples_per_worker, epochs)
    point = np.asarray(point, dtype=np.float64)
    best = _round_neighbours(point, spec, profile, par, exhaustive_limit)
    reference = float(energy_cost(AlgoParams.from_vector(point[:-2]), profile))
    if best is not None and float(energy_cost(best, profile)) <= reference * (1 + dive_gap):
        return best
    dived = _dive(point, spec, mode, profile, par)
    if dived is not None and (best is None or energy_cost(dived, profile) < energy_cost(best, profile)):
        return dived
    return best


def _dive(point, spec: OptSpec, mode: Mode, profile: SystemProfile, par: Parametrization) -> AlgoParams | None:
    fixed: dict[int, float] = {}
    groups = list(par.groups)
    while groups:
        g = min(groups, key=lambda grp: point[grp[0]])
        groups.remove(g)
        col = par.group_column(g)
        v = point[g[0]]
        branches = []
        for val in sorted({max(1.0, math.floor(v)), max(1.0, math.ceil(v))}):
            trial = {**fixed, col: val}
            if not groups:
                p = _integer_params({grp[0]: trial[par.group_column(grp)] for grp in par.groups}, par, spec)
                if integer_feasible(p, spec, profile):
                    branches.append((float(energy_cost(p, profile)), trial, None))
                continue
            try:
                res = run_algorithm2(spec, mode, par=par.fix(trial))
            except SolverFailure:
                continue
            if res.feasible:
                branches.append((res.energy, trial, res.point))
        if not branches:
            return None
        _, fixed, new_point = min(branches, key=lambda b: b[0])
        if new_point is not None:
            point = new_point
    return _integer_params({grp[0]: fixed[par.group_column(grp)] for grp in par.groups}, par, spec)


def _round_neighbours(point, spec: OptSpec, profile: SystemProfile, par: Parametrization,
                      exhaustive_limit: int) -> AlgoParams | None:
    """Lowest-energy feasible floor/ceil neighbour of ``point``.

    Up to ``exhaustive_limit`` free integer groups all combinations are
    checked; beyond that, everything is rounded up and groups are greedily
    moved down while that stays feasible and lowers the energy, or reduces the
    largest constraint violation.
    """
    choices = []
    for g in par.groups:
        v = point[g[0]]
        lo, hi = max(1.0, math.floor(v)), max(1.0, math.ceil(v))
        choices.append(sorted({lo, hi}))

    def make(combo):
        return _integer_params({g[0]: val for g, val in zip(par.groups, combo)}, par, spec)

    def score(p):
        return float(energy_cost(p, profile))

    if len(par.groups) <= exhaustive_limit:
        best, best_e = None, math.inf
        for combo in itertools.product(*choices):
            p = make(combo)
            if integer_feasible(p, spec, profile):
                e = score(p)
                if e < best_e:
                    best, best_e = p, e
        return best

    def violation(p):
        return max(float(time_cost(p, profile)) / spec.t_max, float(conv_error(p, profile, spec.constants)) / spec.c_max)

    combo = [c[-1] for c in choices]
    current = make(combo)
    while True:
        feasible_now = integer_feasible(current, spec, profile)
        best_move, best_key = None, None
        for i, c in enumerate(choices):
            if combo[i] == c[0]:
                continue
            trial = combo.copy()
            trial[i] = c[0]
            p = make(trial)
            if feasible_now:
                key = score(p) if integer_feasible(p, spec, profile) else None
                if key is not None and key < score(current) and (best_key is None or key < best_key):
                    best_move, best_key = trial, key
            else:
                key = violation(p)
                if key < violation(current) and (best_key is None or key < best_key):
                    best_move, best_key = trial, key
        if best_move is None:
            return current if feasible_now else None
        combo = best_move
        current = make(combo)


def optimize(spec: OptSpec, mode: Mode = Mode.GENQSGD, starts: Sequence[np.ndarray] = ()) -> OptResult:
    """Full pipeline for one mode: feasible start, iterative GP solve, integer recovery.

    FedAvg is solved for each epoch count ``m = 1..fedavg_max_epochs`` and the
    lowest-energy feasible result kept.  Each point in ``starts`` (full
    variables) seeds an extra run and the best local solution is returned.
    """
    mode = Mode(mode)
    if starts and mode is not Mode.FEDAVG:
        best = optimize(spec, mode)
        problem = build_equivalent_problem(spec, mode_profile(spec, mode))
        par = parametrization(mode, spec.n_workers, spec.samples_per_worker)
        for x in starts:
            try:
                init = find_feasible_init(spec, mode, par=par, start=x)
            except Infeasible:
                continue
            res = run_algorithm2(spec, mode, init=_state(0, init.point, problem, par))
            if res.feasible and (not best.feasible or res.energy < best.energy):
                best = _finish(spec, res)
        return best
    if mode is Mode.FEDAVG:
        if spec.samples_per_worker is None:
            raise ValueError("FedAvg needs samples_per_worker in the OptSpec")
        best = OptResult(mode, Status.INFEASIBLE, message="no epoch count is feasible")
        for m in range(1, spec.fedavg_max_epochs + 1):
            res = _finish(spec, run_algorithm2(spec, mode, epochs=m))
            if res.feasible and (not best.feasible or res.energy < best.energy):
                best = res
        return best
    return _finish(spec, run_algorithm2(spec, mode))


def _finish(spec: OptSpec, res: OptResult) -> OptResult:
    if not res.feasible:
        return res
    p = round_to_integer(res.point, spec, res.mode, res.fedavg_epochs)
    if p is None:
        res.message = Status.ROUNDING_FAILED.value
    else:
        res.integer_params = p
        res.integer_energy = float(energy_cost(p, mode_profile(spec, res.mode)))
    return res


def baseline_params(mode: Mode, spec: OptSpec) -> OptResult:
    return optimize(spec, mode)


# ---------------------------------------------------------------------------
# brute-force oracle


@dataclass
class GridResult:
    status: Status
    params: AlgoParams | None
    energy: float


def grid_oracle(spec: OptSpec, resolution: int = 50, bounds=(1e-2, 1e6), refinements: int = 0,
                refine_resolution: int | None = None) -> GridResult:
    """Exhaustive log-grid search over continuous ``(K0, K_n, B)`` (GenQSGD, ``N <= 3``).

    Feasibility and energy are evaluated directly from the cost model; grid
    points below ``spec.min_value`` are excluded.  Each refinement re-grids a
    box of two grid steps around the incumbent.
    """
    n = spec.n_workers
    if n > 3:
        raise ValueError("grid oracle is limited to N <= 3")
    profile = spec.profile
    low = max(bounds[0], spec.min_value)
    axes = [np.geomspace(low, bounds[1], resolution)] * (n + 2)
    best = _grid_pass(spec, profile, axes)
    res = refine_resolution or resolution
    for _ in range(refinements):
        if best is None:
            break
        new_axes = []
        for ax, val in zip(axes, best[0]):
            ratio = ax[1] / ax[0] if ax.size > 1 else 1.0
            new_axes.append(np.geomspace(max(val / ratio**2, low), val * ratio**2, res))
        axes = new_axes
        cand = _grid_pass(spec, profile, axes)
        if cand is not None and cand[1] <= best[1]:
            best = cand
    if best is None:
        return GridResult(Status.INFEASIBLE, None, math.inf)
    v = best[0]
    return GridResult(Status.SOLVED, AlgoParams(v[0], v[1:n + 1], v[n + 1]), best[1])


def _grid_pass(spec: OptSpec, profile: SystemProfile, axes):
    n = spec.n_workers
    k0_axis, k_axes, b_axis = axes[0], axes[1:n + 1], axes[n + 1]
    mesh = np.meshgrid(*k_axes, b_axis, indexing="ij")
    k = np.stack(mesh[:n], axis=-1)
    b = mesh[n]
    best = None
    for k0 in k0_axis:
        params = AlgoParams(k0, k, b)
        ok = (time_cost(params, profile) <= spec.t_max) & (conv_error(params, profile, spec.constants) <= spec.c_max)
        if not np.any(ok):
            continue
        e = np.where(ok, energy_cost(params, profile), np.inf)
        i = np.unravel_index(np.argmin(e), e.shape)
        if best is None or e[i] < best[1]:
            best = (np.array([k0, *k[i], b[i]]), float(e[i]))
    return best


# ---------------------------------------------------------------------------
# limit sweeps


@dataclass
class SweepPoint:
    axis: str
    value: float
    mode: Mode
    result: OptResult


def _limited(spec: OptSpec, axis: str, value: float) -> OptSpec:
    if axis == "cmax":
        return spec.with_limits(c_max=value)
    if axis == "tmax":
        return spec.with_limits(t_max=value)
    raise ValueError(f"unknown sweep axis {axis!r}")


def _sweep_job(args):
    spec, axis, value, mode = args
    return optimize(_limited(spec, axis, value), mode)


def _better(new: OptResult, old: OptResult) -> bool:
    return new.feasible and (not old.feasible or new.energy < old.energy)


def sweep(spec: OptSpec, axis: str, values: Sequence[float], modes: Sequence[Mode] = tuple(Mode),
          jobs: int = 1) -> list[SweepPoint]:
    """Optimise every mode at every limit value.

    Points are first solved independently (in a ``jobs``-process pool when
    ``jobs > 1``).  A sequential pass then re-solves, in order of increasing
    limit, any point that is worse than the previous limit's solution (which
    stays feasible when the limit grows), and re-solves GenQSGD from every
    baseline solution that beats it.  The result does not depend on ``jobs``.
    """
    values = sorted(float(v) for v in values)
    modes = [Mode(m) for m in modes]
    tasks = [(spec, axis, v, m) for v in values for m in modes]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            solved = list(pool.map(_sweep_job, tasks))
    else:
        solved = [_sweep_job(t) for t in tasks]
    table = {(t[2], t[3]): r for t, r in zip(tasks, solved)}

    def carry(mode):
        for prev, v in zip(values, values[1:]):
            before = table[(prev, mode)]
            if before.feasible and not (table[(v, mode)].feasible and table[(v, mode)].energy <= before.energy):
                retry = optimize(_limited(spec, axis, v), mode, starts=[before.point])
                if _better(retry, table[(v, mode)]):
                    table[(v, mode)] = retry

    for m in modes:
        if m is not Mode.GENQSGD:
            carry(m)
    if Mode.GENQSGD in modes:
        for v in values:
            own = table[(v, Mode.GENQSGD)]
            rivals = [table[(v, m)] for m in modes if m is not Mode.GENQSGD]
            starts = [r.point for r in rivals if r.feasible and (not own.feasible or r.energy < own.energy)]
            if starts:
                retry = optimize(_limited(spec, axis, v), Mode.GENQSGD, starts=starts)
                if _better(retry, own):
                    table[(v, Mode.GENQSGD)] = retry
    if Mode.GENQSGD in modes:
        carry(Mode.GENQSGD)
    return [SweepPoint(axis, v, m, table[(v, m)]) for v in values for m in modes]
