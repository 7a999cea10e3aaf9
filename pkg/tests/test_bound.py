import numpy as np
import pytest

from fedopt.bound import BoundCheck, check_bound
from fedopt.cost_model import AlgoParams
from fedopt.engine import ProblemConstants
from fedopt.tasks import make_synthetic_task

SETTINGS = [AlgoParams(6, [1, 2, 3], 2), AlgoParams(4, [3, 3, 3], 4)]


class TestCheckBound:
    @pytest.mark.parametrize("levels", [(float("inf"), float("inf")), (16, 8)])
    def test_quadratic_holds(self, levels):
        task = make_synthetic_task("quadratic", 8, 3, 20, seed=1)
        checks = check_bound(task, SETTINGS, 0.05, seeds=range(8), levels=levels, probe_count=16)
        assert len(checks) == 2
        for c in checks:
            assert c.passed and c.lhs > 0
            assert c.constants.lipschitz == pytest.approx(1.0, rel=1e-3)

    def test_logistic_with_lower_bound(self):
        task = make_synthetic_task("logistic", 8, 3, 20, seed=2)
        with pytest.raises(ValueError):
            check_bound(task, SETTINGS, 0.5, seeds=[0])
        checks = check_bound(task, SETTINGS, 0.5, seeds=range(6), f_star=0.0, probe_count=16)
        assert all(c.passed for c in checks)

    def test_quantization_raises_rhs(self):
        task = make_synthetic_task("quadratic", 8, 3, 20, seed=1)
        exact = check_bound(task, SETTINGS[:1], 0.05, seeds=range(4), probe_count=8)[0]
        coarse = check_bound(task, SETTINGS[:1], 0.05, seeds=range(4), levels=(2, 2), probe_count=8)[0]
        assert coarse.rhs > exact.rhs


class TestBoundCheck:
    def test_passed_is_inclusive(self):
        c = BoundCheck(AlgoParams(1, [1], 1), 2.0, 0.0, 2.0, 0.0, ProblemConstants(1, 1, 1, 0))
        assert c.passed
        c.lhs = float(np.nextafter(2.0, 3.0))
        assert not c.passed
