"""Time, energy and convergence-error models of GenQSGD.

Units: seconds, joules, and a dimensionless error bound.  All functions accept
continuous parameters and broadcast over leading array axes: ``k0`` and
``batch`` of shape ``S`` and ``k`` of shape ``S + (N,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class NodeProfile:
    """Compute/communication parameters of the server or of one worker.

    ``cycles`` is per-sample gradient cost for a worker and per-aggregation
    cost for the server.  ``levels`` (the quantizer's ``s``) is only needed by
    the ``"log2-levels"`` communication-energy variant.
    """

    cpu_freq: float
    cycles: float
    capacitance: float
    tx_power: float
    tx_rate: float
    quant_variance: float
    quant_bits: float
    levels: float | None = None

    def __post_init__(self):
        for name in ("cpu_freq", "cycles", "capacitance", "tx_power", "tx_rate", "quant_bits"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if not (self.quant_variance >= 0 and math.isfinite(self.quant_variance)):
            raise ValueError(f"quant_variance must be nonnegative, got {self.quant_variance!r}")

    @property
    def seconds_per_cycle_unit(self) -> float:
        return self.cycles / self.cpu_freq

    @property
    def energy_per_cycle_unit(self) -> float:
        return self.capacitance * self.cycles * self.cpu_freq**2

    @property
    def tx_time(self) -> float:
        return self.quant_bits / self.tx_rate

    @property
    def tx_energy(self) -> float:
        return self.tx_power * self.quant_bits / self.tx_rate


@dataclass(frozen=True)
class SystemProfile:
    server: NodeProfile
    workers: tuple[NodeProfile, ...]

    def __post_init__(self):
        object.__setattr__(self, "workers", tuple(self.workers))
        if len(self.workers) < 1:
            raise ValueError("need at least one worker")

    @property
    def n_workers(self) -> int:
        return len(self.workers)

    def worker_array(self, name: str) -> np.ndarray:
        return np.array([getattr(w, name) for w in self.workers], dtype=np.float64)

    @property
    def quant_weights(self) -> np.ndarray:
        """``q_{s0} + q_{sn} + q_{s0} q_{sn}`` for each worker."""
        q0 = self.server.quant_variance
        qn = self.worker_array("quant_variance")
        return q0 + qn + q0 * qn

    @property
    def round_overhead_time(self) -> float:
        """Per-round time not scaled by ``B K_n``: aggregation plus both transmissions."""
        return (
            self.server.seconds_per_cycle_unit
            + max(w.tx_time for w in self.workers)
            + self.server.tx_time
        )

    def with_quantization(self, server: tuple[float, float] | None = None,
                          workers: tuple[float, float] | None = None) -> "SystemProfile":
        """Copy with ``(q, M)`` replaced on the server and/or all workers."""
        srv = self.server
        wks = self.workers
        if server is not None:
            srv = replace(srv, quant_variance=server[0], quant_bits=server[1])
        if workers is not None:
            wks = tuple(replace(w, quant_variance=workers[0], quant_bits=workers[1]) for w in wks)
        return SystemProfile(srv, wks)


@dataclass(frozen=True)
class LearnConstants:
    """Constants of the learning problem.

    ``init_gap`` is the configured scalar ``f(x_hat^(1)) - delta`` that enters ``c1``.
    """

    lipschitz: float
    sigma: float
    second_moment: float
    step_size: float
    init_gap: float
    n_workers: int
    dimension: int

    def __post_init__(self):
        for name in ("lipschitz", "sigma", "second_moment", "step_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.step_size > 1.0 / self.lipschitz * (1 + 1e-12):
            raise ValueError(f"step size {self.step_size} exceeds 1/L = {1.0 / self.lipschitz}")
        if self.init_gap < 0:
            raise ValueError("init_gap must be nonnegative")
        if self.n_workers < 1 or self.dimension < 1:
            raise ValueError("n_workers and dimension must be positive")

    @property
    def c1(self) -> float:
        return 2 * self.n_workers * self.init_gap / self.step_size

    @property
    def c2(self) -> float:
        g, L, G = self.step_size, self.lipschitz, self.second_moment
        return 4 * g**2 * G**2 * L**2

    @property
    def c3(self) -> float:
        return self.lipschitz * self.step_size * self.sigma**2 / self.n_workers

    @property
    def quant_coeff(self) -> float:
        """``2 L gamma G^2``, the factor in front of the quantization term."""
        return 2 * self.lipschitz * self.step_size * self.second_moment**2


@dataclass
class AlgoParams:
    """GenQSGD parameters: ``k0`` global rounds, ``k[n]`` local steps, mini-batch ``batch``."""

    k0: float
    k: Sequence[float]
    batch: float

    def __post_init__(self):
        self.k = np.asarray(self.k)
        if not np.issubdtype(self.k.dtype, np.integer):
            self.k = self.k.astype(np.float64)

    @property
    def n_workers(self) -> int:
        return int(np.shape(self.k)[-1])

    @property
    def k_max(self):
        return np.max(self.k, axis=-1)

    def is_integer(self) -> bool:
        vals = np.concatenate([np.ravel(self.k0), np.ravel(self.k), np.ravel(self.batch)]).astype(float)
        return bool(np.all(vals == np.round(vals)))

    def validate(self, min_samples: int | None = None) -> None:
        if not (np.all(np.asarray(self.k0) > 0) and np.all(self.k > 0) and np.all(np.asarray(self.batch) > 0)):
            raise ValueError(f"algorithm parameters must be positive: {self}")
        if min_samples is not None and np.any(np.asarray(self.batch) > min_samples):
            raise ValueError(f"batch size {self.batch} exceeds smallest worker dataset ({min_samples})")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[float(self.k0)], np.asarray(self.k, dtype=float), [float(self.batch)]])

    @classmethod
    def from_vector(cls, v) -> "AlgoParams":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1:-1], v[-1])

    def to_int(self) -> "AlgoParams":
        if not self.is_integer():
            raise ValueError("parameters are not integral")
        return AlgoParams(int(round(float(self.k0))), [int(round(x)) for x in np.ravel(self.k)],
                          int(round(float(self.batch))))


def _unpack(params: AlgoParams):
    k0 = np.asarray(params.k0, dtype=np.float64)
    k = np.asarray(params.k, dtype=np.float64)
    b = np.asarray(params.batch, dtype=np.float64)
    return k0, k, b


def _check_workers(k: np.ndarray, profile: SystemProfile) -> None:
    if k.shape[-1] != profile.n_workers:
        raise ValueError(f"params have {k.shape[-1]} workers, profile has {profile.n_workers}")


def time_cost(params: AlgoParams, profile: SystemProfile):
    """Total wall-clock time of ``k0`` rounds (seconds)."""
    k0, k, b = _unpack(params)
    _check_workers(k, profile)
    compute = b * np.max(profile.worker_array("seconds_per_cycle_unit") * k, axis=-1)
    return k0 * (compute + profile.round_overhead_time)


def energy_cost(params: AlgoParams, profile: SystemProfile, comm_model: str = "bits",
                dimension: int | None = None):
    """Total energy of ``k0`` rounds (joules).

    ``comm_model="log2-levels"`` selects the alternative worker upload energy
    ``D * sum_n p_n log2(s_n) / r_n``; it requires ``dimension`` and
    ``levels`` on every worker.
    """
    k0, k, b = _unpack(params)
    _check_workers(k, profile)
    compute = b * np.sum(profile.worker_array("energy_per_cycle_unit") * k, axis=-1)
    server_compute = profile.server.energy_per_cycle_unit
    if comm_model == "bits":
        comm = profile.server.tx_energy + sum(w.tx_energy for w in profile.workers)
    elif comm_model == "log2-levels":
        if dimension is None or any(w.levels is None for w in profile.workers):
            raise ValueError("log2-levels model needs dimension and per-worker levels")
        comm = profile.server.tx_energy + dimension * sum(
            w.tx_power * math.log2(w.levels) / w.tx_rate for w in profile.workers)
    else:
        raise ValueError(f"unknown communication energy model {comm_model!r}")
    return k0 * (compute + server_compute + comm)


def error_terms(params: AlgoParams, profile: SystemProfile, constants: LearnConstants, c1=None):
    """The four additive terms of the convergence-error bound, in order."""
    k0, k, b = _unpack(params)
    _check_workers(k, profile)
    if c1 is None:
        c1 = constants.c1
    total_k = np.sum(k, axis=-1)
    first = c1 / (k0 * total_k)
    second = constants.c2 * np.max(k, axis=-1) ** 2
    third = constants.c3 / b
    fourth = constants.quant_coeff * np.sum(profile.quant_weights * k**2, axis=-1) / total_k
    return first, second, third, fourth


def conv_error(params: AlgoParams, profile: SystemProfile, constants: LearnConstants):
    """Convergence-error upper bound ``C(K, B)`` with ``delta`` standing in for ``f*``."""
    first, second, third, fourth = error_terms(params, profile, constants)
    return first + second + third + fourth


def theorem1_rhs(params: AlgoParams, profile: SystemProfile, constants: LearnConstants,
                 f_init: float, f_star: float):
    """Right-hand side of the GenQSGD convergence bound with the true ``f(x_hat^(1)) - f*``."""
    if f_init < f_star:
        raise ValueError(f"f_init ({f_init}) below f_star ({f_star})")
    c1 = 2 * constants.n_workers * (f_init - f_star) / constants.step_size
    return sum(error_terms(params, profile, constants, c1=c1))
