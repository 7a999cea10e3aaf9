"""Empirical check of the GenQSGD convergence bound on small tasks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cost_model import AlgoParams, LearnConstants, NodeProfile, SystemProfile, theorem1_rhs
from .engine import ProblemConstants, empirical_lhs, estimate_constants, run_genqsgd
from .quantizer import INFINITE, QuantSpec
from .tasks import Task


@dataclass
class BoundCheck:
    params: AlgoParams
    lhs: float  # seed-averaged weighted mean squared gradient norm
    lhs_stderr: float
    rhs: float
    f_init: float  # seed-averaged f(x_hat^(1))
    constants: ProblemConstants

    @property
    def passed(self) -> bool:
        return bool(self.lhs <= self.rhs)


def _profile(n_workers: int, q_server: float, q_worker: float) -> SystemProfile:
    # only the quantization variances enter the bound
    node = dict(cpu_freq=1.0, cycles=1.0, capacitance=1.0, tx_power=1.0, tx_rate=1.0, quant_bits=1.0)
    return SystemProfile(NodeProfile(quant_variance=q_server, **node),
                         [NodeProfile(quant_variance=q_worker, **node) for _ in range(n_workers)])


def check_bound(task: Task, settings: Sequence[AlgoParams], step_size: float, seeds: Sequence[int],
                levels: tuple[float, float] = (INFINITE, INFINITE), f_star: float | None = None,
                init_scale: float = 1.0, probe_count: int = 64, probe_margin: float = 0.1,
                constants_seed: int = 0) -> list[BoundCheck]:
    """Compare the seed-averaged left side of the bound with its right side.

    ``levels`` are the server and worker quantizer levels.  ``f_star`` falls
    back to ``task.f_star``; a known lower bound on the optimum (e.g. 0 for a
    nonnegative loss) only loosens the right side.  ``L``, ``sigma`` and ``G``
    are measured on the box spanned by every visited iterate, widened by
    ``probe_margin`` of its extent, with the iterates themselves probed too.
    """
    f_star = task.f_star if f_star is None else f_star
    if f_star is None:
        raise ValueError("f_star is unknown for this task; pass a lower bound")
    dim = task.dimension
    quant = [QuantSpec.create(levels[0], dim)] + [QuantSpec.create(levels[1], dim)] * task.n_workers
    traces = {i: [run_genqsgd(task, p, quant, step_size, seed, init_scale=init_scale) for seed in seeds]
              for i, p in enumerate(settings)}

    visited = np.vstack([np.vstack([t.global_iterates[1:], t.averaged_iterates.reshape(-1, dim)])
                         for runs in traces.values() for t in runs])
    low, high = visited.min(axis=0), visited.max(axis=0)
    pad = probe_margin * (high - low) + 1e-12
    stride = max(1, len(visited) // (4 * probe_count))
    measured = estimate_constants(task, probe_count, constants_seed, center=(low + high) / 2,
                                  radius=(high - low) / 2 + pad, extra_points=visited[::stride])

    profile = _profile(task.n_workers, quant[0].variance_bound, quant[1].variance_bound)
    out = []
    for i, p in enumerate(settings):
        runs = traces[i]
        lhs = np.array([empirical_lhs(t) for t in runs])
        f_init = float(np.mean([task.global_loss(t.global_iterates[1]) for t in runs]))
        constants = LearnConstants(lipschitz=measured.lipschitz, sigma=measured.sigma,
                                   second_moment=measured.second_moment, step_size=step_size,
                                   init_gap=max(f_init - f_star, 0.0), n_workers=task.n_workers, dimension=dim)
        rhs = float(theorem1_rhs(runs[0].params, profile, constants, f_init, min(f_star, f_init)))
        stderr = float(lhs.std(ddof=1) / np.sqrt(lhs.size)) if lhs.size > 1 else 0.0
        out.append(BoundCheck(runs[0].params, float(lhs.mean()), stderr, rhs, f_init, measured))
    return out
