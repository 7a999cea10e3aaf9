import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedopt import gp
from fedopt.cost_model import AlgoParams, time_cost
from fedopt.gp import GeometricProgram, Monomial, Posynomial, Status, solve, to_convex_form
from fedopt.optimizer import build_equivalent_problem
from fedopt.scenarios import paper_spec

from oracles import cvxpy_gp_value


def random_gp(rng, n_vars=3, n_cons=3):
    """Bounded, strictly feasible random GP: a box plus random posynomial constraints."""
    ref = np.exp(rng.uniform(-1, 1, n_vars))

    def posy(n_terms, scale_at=None):
        c = rng.uniform(0.5, 2.0, n_terms)
        a = rng.integers(-2, 3, size=(n_terms, n_vars)).astype(float)
        p = Posynomial(c, a)
        if scale_at is not None:
            p = p / (p.evaluate(ref) * rng.uniform(1.2, 3.0))
        return p

    cons, names = [], []
    for i in range(n_vars):
        e = np.zeros(n_vars)
        e[i] = 1
        cons += [Posynomial([1 / (ref[i] * 20)], [e]), Posynomial([ref[i] / 20], [-e])]
        names += [f"hi{i}", f"lo{i}"]
    for j in range(n_cons):
        cons.append(posy(int(rng.integers(1, 4)), scale_at=ref))
        names.append(f"p{j}")
    return GeometricProgram([f"x{i}" for i in range(n_vars)], posy(int(rng.integers(1, 5))), cons, names)


class TestPosynomialAlgebra:
    def test_monomial_arithmetic(self):
        x, y = Monomial.variable(0, 2), Monomial.variable(1, 2)
        m = 3 * x**2 / y
        assert m.evaluate([2.0, 4.0]) == pytest.approx(3.0)
        p = m + y + 1
        assert isinstance(p, Posynomial) and p.coefficients.size == 3
        assert p.evaluate([2.0, 4.0]) == pytest.approx(8.0)

    def test_product_and_division(self):
        x, y = Monomial.variable(0, 2), Monomial.variable(1, 2)
        p = (x + y) * (x + 2)
        assert p.evaluate([1.5, 0.5]) == pytest.approx(2.0 * 3.5)
        assert (p / (x * y)).evaluate([1.5, 0.5]) == pytest.approx(7.0 / 0.75)
        with pytest.raises(TypeError):
            p / (x + y)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            Monomial(0.0, [1])
        with pytest.raises(ValueError):
            Posynomial([1.0, -1.0], [[1], [2]])
        with pytest.raises(ValueError):
            Posynomial([1.0], [[1]]).evaluate([0.0])

    def test_substitute(self):
        p = Posynomial([2.0, 1.0], [[1, 0], [0, 2]])
        # x0 = w, x1 = 3 w
        q = p.substitute(np.array([[1.0], [1.0]]), np.array([0.0, np.log(3.0)]))
        assert q.evaluate([2.0]) == pytest.approx(p.evaluate([2.0, 6.0]))


class TestConvexForm:
    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_derivatives_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        form = to_convex_form(random_gp(rng))
        z = rng.normal(size=3) * 0.5
        vals, grads, hess = form.derivatives(z)
        assert np.allclose(vals, form.values(z))
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (form.values(z + e) - form.values(z - e)) / (2 * h)
            assert np.allclose(grads[:, i], fd, atol=1e-6)
            gfd = (form.derivatives(z + e)[1] - form.derivatives(z - e)[1]) / (2 * h)
            assert np.allclose(hess[:, :, i], gfd, atol=1e-5)

    def test_values_are_log_posynomials(self):
        g = random_gp(np.random.default_rng(4))
        x = np.array([0.7, 1.3, 2.1])
        expected = [np.log(p.evaluate(x)) for p in [g.objective, *g.constraints]]
        assert np.allclose(to_convex_form(g).values(np.log(x)), expected, rtol=1e-13)

    def test_stable_for_large_exponents(self):
        form = to_convex_form(GeometricProgram(["x"], Posynomial([1.0, 1.0], [[800.0], [0.0]])))
        assert form.values(np.array([1.0]))[0] == pytest.approx(800.0)


class TestSolve:
    def test_product_with_box(self):
        x, y = Monomial.variable(0, 2), Monomial.variable(1, 2)
        g = GeometricProgram(["x", "y"], Posynomial.from_terms([1 / (x * y)]),
                             [Posynomial.from_terms([x / 2]), Posynomial.from_terms([y / 3])])
        res = solve(g)
        assert res.status is Status.SOLVED
        assert res.value == pytest.approx(1 / 6, rel=1e-8)
        assert res.point == pytest.approx([2, 3], rel=1e-6)

    def test_unconstrained(self):
        x = Monomial.variable(0, 1)
        res = solve(GeometricProgram(["x"], x + 1 / x))
        assert res.status is Status.SOLVED
        assert res.value == pytest.approx(2.0, rel=1e-12)
        assert res.point[0] == pytest.approx(1.0, rel=1e-6)

    def test_infeasible(self):
        x = Monomial.variable(0, 1)
        g = GeometricProgram(["x"], Posynomial.from_terms([x]),
                             [Posynomial.from_terms([x / 2]), Posynomial.from_terms([3 / x])])
        assert solve(g).status is Status.INFEASIBLE

    def test_infeasible_start_goes_through_phase_one(self):
        x = Monomial.variable(0, 1)
        g = GeometricProgram(["x"], Posynomial.from_terms([1 / x]), [Posynomial.from_terms([x / 50])])
        res = solve(g, init=[1000.0])
        assert res.status is Status.SOLVED and res.value == pytest.approx(1 / 50, rel=1e-7)

    def test_rejects_nonpositive_start(self):
        with pytest.raises(ValueError):
            solve(random_gp(np.random.default_rng(0)), init=[1.0, 0.0, 1.0])

    def test_duals_satisfy_kkt(self):
        res = solve(random_gp(np.random.default_rng(8)), tol=1e-10)
        assert res.status is Status.SOLVED
        assert np.all(res.duals >= 0)
        assert res.stationarity_residual <= 1e-10

    @pytest.mark.parametrize("seed", range(12))
    def test_matches_cvxpy(self, seed):
        g = random_gp(np.random.default_rng(seed))
        res = solve(g, tol=1e-10)
        assert res.status is Status.SOLVED
        ref, _ = cvxpy_gp_value(g, solver="SCS", eps=1e-10, max_iters=200_000)
        assert res.value == pytest.approx(ref, rel=1e-5)
        assert g.is_feasible(res.point)

    @settings(max_examples=15)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
    def test_objective_scaling(self, seed, scale):
        g = random_gp(np.random.default_rng(seed))
        scaled = GeometricProgram(g.variables, g.objective * scale, g.constraints)
        a, b = solve(g, tol=1e-10), solve(scaled, tol=1e-10)
        assert b.value == pytest.approx(scale * a.value, rel=1e-7)
        assert b.point == pytest.approx(a.point, rel=1e-4)

    def test_find_feasible(self):
        g = random_gp(np.random.default_rng(2))
        point, worst = gp.find_feasible(g, init=np.full(3, 100.0))
        assert worst < 0 and g.is_feasible(point)


class TestSerialization:
    def test_json_round_trip(self):
        g = random_gp(np.random.default_rng(3))
        back = GeometricProgram.from_json(g.to_json())
        assert back.variables == g.variables and back.constraint_names == g.constraint_names
        x = np.array([0.9, 1.1, 1.7])
        assert back.objective.evaluate(x) == g.objective.evaluate(x)
        assert np.array_equal(back.constraint_values(x), g.constraint_values(x))

    def test_json_shape(self):
        x = Monomial.variable(0, 2)
        g = GeometricProgram(["a", "b"], Posynomial.from_terms([2 * x]), [Posynomial.from_terms([x / 4])], ["cap"])
        data = json.loads(g.to_json())
        assert data == {"variables": ["a", "b"], "objective": [{"coef": 2.0, "exponents": {"a": 1.0}}],
                        "constraints": [{"name": "cap", "terms": [{"coef": 0.25, "exponents": {"a": 1.0}}]}]}

    def test_unknown_variable(self):
        with pytest.raises(ValueError):
            GeometricProgram.from_dict({"variables": ["a"], "objective": [{"coef": 1, "exponents": {"z": 1}}]})

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            GeometricProgram(["a", "b"], Posynomial([1.0], [[1.0]]))


class TestTimePosynomial:
    def test_equals_time_cost(self):
        spec = paper_spec()
        problem = build_equivalent_problem(spec)
        rng = np.random.default_rng(0)
        spc = spec.profile.worker_array("seconds_per_cycle_unit")
        for _ in range(50):
            k0, k, b = rng.uniform(1, 500), rng.uniform(1, 30, 10), rng.uniform(1, 64)
            t1 = float(np.max(spc * k))
            x = np.concatenate([[k0], k, [b, t1, k.max()]])
            expected = float(time_cost(AlgoParams(k0, k, b), spec.profile))
            assert problem.time_constraint.evaluate(x) * spec.t_max == pytest.approx(expected, rel=1e-12)
