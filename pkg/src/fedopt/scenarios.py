"""Reference system profiles and random problem instances."""

from __future__ import annotations

import numpy as np

from .cost_model import LearnConstants, NodeProfile, SystemProfile
from .optimizer import OptSpec

PAPER_DIMENSION = 101632  # 784-128-10 network without biases
PAPER_WORKERS = 10
PAPER_SAMPLES = 60000


def spread(low: float, high: float, n: int) -> np.ndarray:
    """``n`` evenly spaced values over ``[low, high]`` (a single worker gets ``low``)."""
    return np.linspace(low, high, n) if n > 1 else np.array([low])


def paper_profile(n_workers: int = PAPER_WORKERS, server_bits: float = 813088.0,
                  worker_bits: float = 711456.0, q_server: float = 4.9, q_worker: float = 9.9) -> SystemProfile:
    """Edge system with the reference ranges, worker ``n`` placed at the ``n``-th grid point of each range."""
    server = NodeProfile(cpu_freq=3e9, cycles=1000.0, capacitance=2e-28, tx_power=20.0, tx_rate=7.5e7,
                         quant_variance=q_server, quant_bits=server_bits)
    workers = [
        NodeProfile(cpu_freq=f, cycles=c, capacitance=2e-28, tx_power=p, tx_rate=r,
                    quant_variance=q_worker, quant_bits=worker_bits)
        for f, c, p, r in zip(spread(2.7e8, 2.7e9, n_workers), spread(1.8e7, 1.8e8, n_workers),
                              spread(0.27, 2.7, n_workers), spread(9e5, 9e6, n_workers))
    ]
    return SystemProfile(server, workers)


def paper_constants(n_workers: int = PAPER_WORKERS, init_gap: float = 0.5) -> LearnConstants:
    return LearnConstants(lipschitz=0.034, sigma=18.0, second_moment=0.6, step_size=0.03, init_gap=init_gap,
                          n_workers=n_workers, dimension=PAPER_DIMENSION)


def paper_spec(t_max: float = 1500.0, c_max: float = 0.1, **kwargs) -> OptSpec:
    n = PAPER_WORKERS
    return OptSpec(t_max, c_max, paper_profile(n), paper_constants(n),
                   samples_per_worker=[PAPER_SAMPLES // n] * n, **kwargs)


def random_spec(rng: np.random.Generator, n_workers: int, slack: tuple[float, float] = (1.3, 3.0)) -> OptSpec:
    """Random heterogeneous system whose limits are loose multiples of a random reference point.

    The reference point ``(K0, K, B)`` is feasible by construction, so the
    returned spec is strictly feasible.
    """
    from .cost_model import AlgoParams, conv_error, time_cost

    def u(lo, hi, size=None):
        return np.exp(rng.uniform(np.log(lo), np.log(hi), size))

    dim = int(rng.integers(1000, 200000))
    bits = lambda: float(dim * rng.uniform(2, 9))  # noqa: E731
    server = NodeProfile(cpu_freq=u(1e9, 5e9), cycles=u(100, 1e4), capacitance=2e-28, tx_power=u(5, 40),
                         tx_rate=u(2e7, 2e8), quant_variance=u(0.5, 10), quant_bits=bits())
    workers = [
        NodeProfile(cpu_freq=u(2.7e8, 2.7e9), cycles=u(1.8e7, 1.8e8), capacitance=2e-28, tx_power=u(0.27, 2.7),
                    tx_rate=u(9e5, 9e6), quant_variance=u(0.5, 10), quant_bits=bits())
        for _ in range(n_workers)
    ]
    profile = SystemProfile(server, workers)
    step = u(0.005, 0.05)
    constants = LearnConstants(lipschitz=u(0.01, 0.1), sigma=u(5, 30), second_moment=u(0.2, 2.0), step_size=step,
                               init_gap=u(0.2, 3.0), n_workers=n_workers, dimension=dim)
    ref = AlgoParams(u(200, 5000), u(1, 20, n_workers), u(1, 64))
    t_max = float(time_cost(ref, profile)) * rng.uniform(*slack)
    c_max = float(conv_error(ref, profile, constants)) * rng.uniform(*slack)
    return OptSpec(t_max, c_max, profile, constants)
