"""Geometric programs: posynomial algebra, log-space convex form, barrier solver.

A GP is ``minimize p0(x)`` subject to ``p_i(x) <= 1`` over ``x > 0`` where all
``p_i`` are posynomials.  With ``x = exp(z)`` every ``log p_i`` becomes a
log-sum-exp of affine functions of ``z`` and the problem is convex.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

log = logging.getLogger(__name__)


class Monomial:
    """``coefficient * prod_i x_i ** exponents[i]`` with ``coefficient > 0``."""

    __slots__ = ("coefficient", "exponents")

    def __init__(self, coefficient: float, exponents):
        if not coefficient > 0:
            raise ValueError(f"monomial coefficient must be positive, got {coefficient!r}")
        self.coefficient = float(coefficient)
        self.exponents = np.asarray(exponents, dtype=np.float64)

    @classmethod
    def variable(cls, index: int, n_vars: int) -> "Monomial":
        a = np.zeros(n_vars)
        a[index] = 1.0
        return cls(1.0, a)

    @classmethod
    def constant(cls, value: float, n_vars: int) -> "Monomial":
        return cls(value, np.zeros(n_vars))

    def evaluate(self, x) -> float:
        return float(self.coefficient * np.prod(np.asarray(x, dtype=float) ** self.exponents))

    def __mul__(self, other):
        if isinstance(other, Monomial):
            return Monomial(self.coefficient * other.coefficient, self.exponents + other.exponents)
        if isinstance(other, Posynomial):
            return other * self
        return Monomial(self.coefficient * float(other), self.exponents)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Monomial):
            return Monomial(self.coefficient / other.coefficient, self.exponents - other.exponents)
        return Monomial(self.coefficient / float(other), self.exponents)

    def __rtruediv__(self, other):
        return Monomial(float(other) / self.coefficient, -self.exponents)

    def __pow__(self, power: float):
        return Monomial(self.coefficient**power, self.exponents * power)

    def __add__(self, other):
        return Posynomial.from_terms([self]) + other

    __radd__ = __add__

    def __repr__(self):
        return f"Monomial({self.coefficient!r}, {self.exponents.tolist()!r})"


class Posynomial:
    """A finite positive sum of monomials over a fixed number of variables."""

    __slots__ = ("coefficients", "exponents")

    def __init__(self, coefficients, exponents):
        c = np.atleast_1d(np.asarray(coefficients, dtype=np.float64))
        a = np.atleast_2d(np.asarray(exponents, dtype=np.float64))
        if c.size == 0:
            raise ValueError("posynomial needs at least one term")
        if a.shape[0] != c.size:
            raise ValueError("one exponent row per coefficient required")
        if not np.all(c > 0):
            raise ValueError("posynomial coefficients must be positive")
        self.coefficients = c
        self.exponents = a

    @classmethod
    def from_terms(cls, terms: Sequence[Monomial]) -> "Posynomial":
        return cls([t.coefficient for t in terms], np.array([t.exponents for t in terms]))

    @property
    def n_vars(self) -> int:
        return self.exponents.shape[1]

    @property
    def terms(self) -> list[Monomial]:
        return [Monomial(c, a) for c, a in zip(self.coefficients, self.exponents)]

    def is_monomial(self) -> bool:
        return self.coefficients.size == 1

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if np.any(x <= 0):
            raise ValueError("posynomials are only defined for strictly positive x")
        return float(np.sum(self.coefficients * np.prod(x ** self.exponents, axis=1)))

    def substitute(self, matrix, offset=None) -> "Posynomial":
        """Re-express in new variables ``w`` where ``log x = matrix @ log w + offset``."""
        matrix = np.asarray(matrix, dtype=np.float64)
        offset = np.zeros(matrix.shape[0]) if offset is None else np.asarray(offset, dtype=np.float64)
        return Posynomial(self.coefficients * np.exp(self.exponents @ offset), self.exponents @ matrix)

    def _as_posy(self, other) -> "Posynomial":
        if isinstance(other, Posynomial):
            return other
        if isinstance(other, Monomial):
            return Posynomial.from_terms([other])
        return Posynomial([float(other)], np.zeros((1, self.n_vars)))

    def __add__(self, other):
        other = self._as_posy(other)
        return Posynomial(np.concatenate([self.coefficients, other.coefficients]),
                          np.vstack([self.exponents, other.exponents]))

    __radd__ = __add__

    def __mul__(self, other):
        other = self._as_posy(other)
        c = np.outer(self.coefficients, other.coefficients).ravel()
        a = (self.exponents[:, None, :] + other.exponents[None, :, :]).reshape(-1, self.n_vars)
        return Posynomial(c, a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Posynomial):
            if not other.is_monomial():
                raise TypeError("a posynomial can only be divided by a monomial")
            other = other.terms[0]
        if isinstance(other, Monomial):
            return Posynomial(self.coefficients / other.coefficient, self.exponents - other.exponents)
        return Posynomial(self.coefficients / float(other), self.exponents)

    def __repr__(self):
        return f"Posynomial({self.coefficients.size} terms, {self.n_vars} vars)"


@dataclass
class GeometricProgram:
    variables: list[str]
    objective: Posynomial
    constraints: list[Posynomial] = field(default_factory=list)
    constraint_names: list[str] | None = None

    def __post_init__(self):
        n = len(self.variables)
        if len(set(self.variables)) != n:
            raise ValueError("duplicate variable names")
        for p in [self.objective, *self.constraints]:
            if p.n_vars != n:
                raise ValueError(f"posynomial over {p.n_vars} variables, program declares {n}")
        if self.constraint_names is None:
            self.constraint_names = [f"g{i}" for i in range(len(self.constraints))]

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def constraint_values(self, x) -> np.ndarray:
        return np.array([c.evaluate(x) for c in self.constraints])

    def is_feasible(self, x, slack: float = 1e-9) -> bool:
        return bool(np.all(self.constraint_values(x) <= 1 + slack))

    # JSON shape: {"variables": [...], "objective": [{"coef": c, "exponents": {name: a}}],
    #              "constraints": [{"name": ..., "terms": [...]}]}
    def to_dict(self) -> dict:
        def terms(p: Posynomial):
            return [{"coef": float(c), "exponents": {v: float(e) for v, e in zip(self.variables, a) if e != 0}}
                    for c, a in zip(p.coefficients, p.exponents)]
        return {
            "variables": list(self.variables),
            "objective": terms(self.objective),
            "constraints": [{"name": n, "terms": terms(c)} for n, c in zip(self.constraint_names, self.constraints)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GeometricProgram":
        names = list(data["variables"])
        index = {v: i for i, v in enumerate(names)}

        def posy(terms):
            rows = []
            for t in terms:
                a = np.zeros(len(names))
                for v, e in t["exponents"].items():
                    if v not in index:
                        raise ValueError(f"undeclared variable {v!r}")
                    a[index[v]] = e
                rows.append(a)
            return Posynomial([t["coef"] for t in terms], np.array(rows).reshape(len(terms), len(names)))

        cons = data.get("constraints", [])
        return cls(names, posy(data["objective"]), [posy(c["terms"]) for c in cons],
                   [c.get("name", f"g{i}") for i, c in enumerate(cons)])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GeometricProgram":
        return cls.from_dict(json.loads(text))


class ConvexForm:
    """Log-sum-exp functions ``h_j(z) = log sum_i exp(A_j z + b_j)_i``.

    Function 0 is the objective, functions ``1..m`` the constraints ``h_j <= 0``.
    """

    def __init__(self, blocks: Sequence[tuple[np.ndarray, np.ndarray]]):
        self.blocks = [(np.atleast_2d(A).astype(float), np.atleast_1d(b).astype(float)) for A, b in blocks]
        sizes = [b.size for _, b in self.blocks]
        self.A = np.vstack([A for A, _ in self.blocks])
        self.b = np.concatenate([b for _, b in self.blocks])
        self.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)
        self.owner = np.repeat(np.arange(len(sizes)), sizes)
        self.n_funcs = len(sizes)
        self.n_vars = self.A.shape[1]

    def values(self, z) -> np.ndarray:
        y = self.A @ z + self.b
        top = np.maximum.reduceat(y, self.starts)
        return top + np.log(np.add.reduceat(np.exp(y - top[self.owner]), self.starts))

    def derivatives(self, z):
        """Values, gradients ``(F, V)`` and Hessians ``(F, V, V)`` of every function."""
        y = self.A @ z + self.b
        top = np.maximum.reduceat(y, self.starts)
        e = np.exp(y - top[self.owner])
        total = np.add.reduceat(e, self.starts)
        vals = top + np.log(total)
        p = e / total[self.owner]
        grads = np.add.reduceat(p[:, None] * self.A, self.starts, axis=0)
        second = np.add.reduceat(p[:, None, None] * self.A[:, :, None] * self.A[:, None, :], self.starts, axis=0)
        hessians = second - grads[:, :, None] * grads[:, None, :]
        return vals, grads, hessians


def to_convex_form(gp: GeometricProgram) -> ConvexForm:
    blocks = [(p.exponents, np.log(p.coefficients)) for p in [gp.objective, *gp.constraints]]
    return ConvexForm(blocks)


class Status(str, enum.Enum):
    SOLVED = "SOLVED"
    INFEASIBLE = "INFEASIBLE"
    ITERATION_LIMIT = "ITERATION_LIMIT"


@dataclass
class GPResult:
    point: np.ndarray
    value: float
    status: Status
    stationarity_residual: float
    duality_gap: float
    duals: np.ndarray
    newton_steps: int

    @property
    def log_point(self) -> np.ndarray:
        return np.log(self.point)


class _Budget:
    def __init__(self, steps: int):
        self.left = steps
        self.used = 0

    def take(self) -> bool:
        if self.left <= 0:
            return False
        self.left -= 1
        self.used += 1
        return True


def _newton_direction(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = H.shape[0]
    scale = max(1.0, float(np.max(np.abs(np.diag(H))))) if n else 1.0
    damping = 0.0
    for _ in range(30):
        try:
            L = np.linalg.cholesky(H + damping * np.eye(n))
        except np.linalg.LinAlgError:
            damping = 1e-12 * scale if damping == 0 else damping * 10
            continue
        return -np.linalg.solve(L.T, np.linalg.solve(L, g))
    return -g / scale


def _center(form: ConvexForm, z: np.ndarray, t: float, budget: _Budget):
    """Newton's method on ``t f0(z) - sum_j log(-h_j(z))``.  Returns ``(z, converged)``."""

    def barrier(zz):
        v = form.values(zz)
        if np.any(v[1:] >= 0):
            return np.inf
        return t * v[0] - np.sum(np.log(-v[1:]))

    phi = barrier(z)
    while True:
        vals, grads, hess = form.derivatives(z)
        slack = -vals[1:]
        g = t * grads[0] + np.sum(grads[1:] / slack[:, None], axis=0)
        H = t * hess[0] + np.einsum("j,jab->ab", 1.0 / slack, hess[1:]) \
            + np.einsum("ja,jb->ab", grads[1:] / slack[:, None], grads[1:] / slack[:, None])
        d = _newton_direction(H, g)
        decrement = -float(g @ d)
        # the barrier value grows like t, so its rounding error does too
        if decrement / 2 <= max(1e-10, 1e-13 * abs(phi)):
            return z, True
        if not budget.take():
            return z, False
        step = 1.0
        while step > 1e-10:
            cand = z + step * d
            phi_c = barrier(cand)
            if phi_c <= phi - 0.25 * step * decrement:
                break
            step *= 0.5
        else:
            # no decrease possible at machine precision
            return z, True
        z, phi = cand, phi_c


def _barrier_solve(form: ConvexForm, z: np.ndarray, tol: float, budget: _Budget, stop_value: float | None = None):
    """Barrier method from a strictly feasible ``z``.  Returns ``(z, t, converged)``."""
    m = form.n_funcs - 1
    if m == 0:
        z, ok = _center(form, z, 1.0, budget)
        return z, np.inf, ok
    t = 1.0
    while True:
        z, ok = _center(form, z, t, budget)
        if not ok:
            return z, t, False
        if stop_value is not None and form.values(z)[0] <= stop_value:
            return z, t, True
        if m / t <= tol:
            return z, t, True
        t *= 10.0


def _phase_one(form: ConvexForm, z0: np.ndarray, tol: float, budget: _Budget, target: float):
    """Minimise ``s`` subject to ``h_j(z) <= s``.  Returns ``(z, s)``.

    A floor on ``s`` and a wide box on ``z`` keep the auxiliary problem
    bounded when every constraint can be driven to minus infinity.
    """
    v = form.n_vars
    blocks = [(np.eye(1, v + 1, v), np.zeros(1))]
    for A, b in form.blocks[1:]:
        blocks.append((np.hstack([A, -np.ones((A.shape[0], 1))]), b))
    blocks.append((-np.eye(1, v + 1, v), np.array([target - 1.0])))
    radius = float(np.max(np.abs(z0), initial=0.0)) + 50.0
    for i in range(v):
        blocks.append((np.eye(1, v + 1, i), np.array([-radius])))
        blocks.append((-np.eye(1, v + 1, i), np.array([-radius])))
    aux = ConvexForm(blocks)
    s0 = max(0.0, float(np.max(form.values(z0)[1:]))) + 1.0
    w, _, _ = _barrier_solve(aux, np.append(z0, s0), tol, budget, stop_value=target)
    return w[:-1], float(np.max(form.values(w[:-1])[1:]))


def _refine_duals(grads: np.ndarray, slack: np.ndarray, t: float):
    """Multipliers for the stationarity residual at the final iterate.

    The central-path estimate ``1 / (t * slack)`` carries the rounding error of
    the tiny slacks, so a nonnegative least-squares fit is tried as well and
    the one with smaller residual plus complementarity is kept.
    """
    if slack.size == 0:
        return np.zeros(0), float(np.linalg.norm(grads[0]))
    central = 1.0 / (t * slack)
    fitted, _ = nnls(grads[1:].T, -grads[0])
    candidates = [central, fitted]
    # the fit is not unique when gradients are degenerate; restricting it to
    # near-active constraints recovers complementary multipliers
    active = slack <= 1e-6
    if active.any():
        lam = np.zeros_like(slack)
        lam[active], _ = nnls(grads[1:][active].T, -grads[0])
        candidates.append(lam)
    best, best_score = central, np.inf
    for lam in candidates:
        score = np.linalg.norm(grads[0] + lam @ grads[1:]) + float(lam @ slack)
        if score < best_score:
            best, best_score = lam, score
    return best, float(np.linalg.norm(grads[0] + best @ grads[1:]))


def _log_start(init, n_vars: int) -> np.ndarray:
    if init is None:
        return np.zeros(n_vars)
    init = np.asarray(init, dtype=np.float64)
    if not np.all(init > 0):
        raise ValueError("initial point must be strictly positive")
    return np.log(init)


def solve(gp: GeometricProgram, init=None, tol: float = 1e-8, max_newton: int = 500,
          phase_one_target: float = -0.1) -> GPResult:
    """Solve a GP with a log-barrier interior-point method.

    ``init`` is a positive starting point; when it is not strictly feasible a
    phase-I problem first minimises the largest constraint value.  ``tol``
    bounds both the duality gap and the KKT stationarity residual of the
    convex form.
    """
    form = to_convex_form(gp)
    m = form.n_funcs - 1
    z = _log_start(init, gp.n_vars)
    budget = _Budget(max_newton)
    if m and np.max(form.values(z)[1:]) >= 0:
        z, worst = _phase_one(form, z, tol, budget, phase_one_target)
        if worst >= 0:
            status = Status.INFEASIBLE if budget.left > 0 else Status.ITERATION_LIMIT
            x = np.exp(z)
            return GPResult(x, gp.objective.evaluate(x), status, np.inf, np.inf, np.zeros(m), budget.used)
    z, t, ok = _barrier_solve(form, z, tol, budget)
    vals, grads, _ = form.derivatives(z)
    duals, residual = _refine_duals(grads, -vals[1:], t)
    gap = m / t if m else 0.0
    status = Status.SOLVED if ok and residual <= tol and gap <= tol else Status.ITERATION_LIMIT
    x = np.exp(z)
    return GPResult(x, gp.objective.evaluate(x), status, residual, gap, duals, budget.used)


def find_feasible(gp: GeometricProgram, init=None, tol: float = 1e-8, max_newton: int = 500,
                  target: float = -0.1):
    """Phase-I search for a strictly feasible point.

    Returns ``(point, worst)`` where ``worst`` is the largest ``log p_i(point)``;
    the GP is strictly feasible iff ``worst < 0``.
    """
    form = to_convex_form(gp)
    z = _log_start(init, gp.n_vars)
    if form.n_funcs == 1:
        return np.exp(z), -np.inf
    vals = form.values(z)
    if np.max(vals[1:]) <= target:
        return np.exp(z), float(np.max(vals[1:]))
    z, worst = _phase_one(form, z, tol, _Budget(max_newton), target)
    return np.exp(z), worst
