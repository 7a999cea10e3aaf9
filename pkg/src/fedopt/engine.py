"""Seeded GenQSGD simulation and the bookkeeping needed to check its convergence bound.

Random streams are addressed by ``(seed, path)`` through :func:`derive_rng`:

* ``(seed, 0)``          initial model ``x0`` (standard normal times ``init_scale``)
* ``(seed, 1, k0)``      server quantization of the broadcast sent at the end of round ``k0``
                         (``k0 = 0`` is the initial broadcast)
* ``(seed, 2, k0, n)``   worker ``n`` in round ``k0``: first its ``K_n`` mini-batch draws,
                         each ``rng.choice(|I_n|, B, replace=False)``, then its upload quantization

so every run is reproducible independent of the order workers finish in.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .cost_model import AlgoParams
from .quantizer import QuantSpec, derive_rng, quantize
from .tasks import Task

log = logging.getLogger(__name__)

MODEL_MAGIC = b"GQSG"
MODEL_VERSION = 1


class TrainingDiverged(RuntimeError):
    """A loss or gradient became non-finite during a run."""


@dataclass
class RunTrace:
    seed: int
    params: AlgoParams
    global_iterates: np.ndarray  # (K0 + 2, D): x_hat^(0) .. x_hat^(K0+1)
    averaged_iterates: np.ndarray | None  # (K0, Kmax + 1, D): x_bar^(k0, k), k = 0..Kmax
    grad_sq_norms: np.ndarray  # (K0, Kmax): |grad f(x_bar^(k0, k-1))|^2, k = 1..Kmax
    active_workers: np.ndarray  # N_k, k = 1..Kmax
    initial_model: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def final_model(self) -> np.ndarray:
        return self.global_iterates[-1]


def active_worker_counts(k: Sequence[int]) -> np.ndarray:
    """``N_k = #{n : k <= K_n}`` for ``k = 1..max K_n``."""
    k = np.asarray(k)
    steps = np.arange(1, int(k.max()) + 1)
    return (steps[:, None] <= k[None, :]).sum(axis=1)


def _check_finite(value, what: str, k0: int, n: int | None = None, k: int | None = None):
    if not np.all(np.isfinite(value)):
        where = f"round {k0}" + (f", worker {n}" if n is not None else "") + (f", local step {k}" if k is not None else "")
        raise TrainingDiverged(f"non-finite {what} at {where}")


def run_genqsgd(task: Task, params: AlgoParams, quant: Sequence[QuantSpec], step_size: float, seed: int,
                x0: np.ndarray | None = None, init_scale: float = 1.0, keep_iterates: bool = True,
                track_gradients: bool = True) -> RunTrace:
    """Run GenQSGD.

    ``quant[0]`` is the server's quantizer, ``quant[n]`` worker ``n``'s.
    With ``track_gradients`` the exact full-data gradient norm is recorded at
    every averaged iterate ``x_bar^(k0, k-1)``; the averaged iterates are only
    bookkeeping and cost nothing in the modelled system.
    """
    params = params.to_int()
    params.validate(task.min_samples)
    n_workers = task.n_workers
    if params.n_workers != n_workers:
        raise ValueError(f"params give {params.n_workers} workers, task has {n_workers}")
    if len(quant) != n_workers + 1:
        raise ValueError("need one quantizer spec for the server and one per worker")
    if step_size < 0:
        raise ValueError("step size must be nonnegative")
    dim = task.dimension
    k0_total, ks, batch = int(params.k0), [int(v) for v in params.k], int(params.batch)
    k_max = max(ks)

    if x0 is None:
        x0 = init_scale * derive_rng(seed, 0).standard_normal(dim)
    x0 = np.asarray(x0, dtype=np.float64)

    x_hat = np.zeros(dim)
    broadcast = quantize(x0, quant[0], derive_rng(seed, 1, 0))
    global_iterates = [x_hat]
    averaged = np.empty((k0_total, k_max + 1, dim)) if keep_iterates else None
    grad_sq = np.full((k0_total, k_max), np.nan)

    for k0 in range(1, k0_total + 1):
        x_hat = x_hat + broadcast
        global_iterates.append(x_hat)
        padded = np.empty((n_workers, k_max + 1, dim))
        uploads = []
        for n in range(n_workers):
            rng = derive_rng(seed, 2, k0, n + 1)
            samples = task.partitions[n]
            x = x_hat.copy()
            padded[n, 0] = x
            for k in range(1, ks[n] + 1):
                batch_idx = samples[rng.choice(samples.size, size=batch, replace=False)]
                g = task.gradient(x, batch_idx)
                _check_finite(g, "gradient", k0, n + 1, k)
                x = x - step_size * g
                padded[n, k] = x
            padded[n, ks[n] + 1:] = x
            uploads.append(quantize(x - x_hat, quant[n + 1], rng))

        x_bar = padded[0]
        for n in range(1, n_workers):
            x_bar = x_bar + padded[n]
        x_bar = x_bar / n_workers
        if keep_iterates:
            averaged[k0 - 1] = x_bar
        if track_gradients:
            for k in range(1, k_max + 1):
                g = task.global_gradient(x_bar[k - 1])
                _check_finite(g, "full gradient", k0, k=k)
                grad_sq[k0 - 1, k - 1] = float(g @ g)

        delta = uploads[0]
        for u in uploads[1:]:
            delta = delta + u
        delta = delta / n_workers
        broadcast = quantize(delta, quant[0], derive_rng(seed, 1, k0))

    global_iterates.append(x_hat + broadcast)
    return RunTrace(
        seed=seed,
        params=params,
        global_iterates=np.array(global_iterates),
        averaged_iterates=averaged,
        grad_sq_norms=grad_sq,
        active_workers=active_worker_counts(ks),
        initial_model=x0,
        meta={"step_size": step_size, "levels": [q.levels for q in quant]},
    )


def empirical_lhs(trace: RunTrace, params: AlgoParams | None = None) -> float:
    """One realisation of the bound's left side: weighted mean squared gradient norm."""
    params = trace.params if params is None else params
    k = np.asarray(params.k, dtype=np.float64)
    n = k.size
    if np.any(np.isnan(trace.grad_sq_norms)):
        raise ValueError("trace was recorded without gradient tracking")
    weights = trace.active_workers / n
    total = float(np.sum(trace.grad_sq_norms @ weights))
    return total / (float(params.k0) * k.mean())


class ProblemConstants(NamedTuple):
    lipschitz: float
    sigma: float
    second_moment: float
    delta: float


def estimate_constants(task: Task, probe_count: int, seed: int, center=None, radius=1.0,
                       pretrain_steps: int = 50, power_steps: int = 8, fd_step: float = 1e-5,
                       extra_points=None) -> ProblemConstants:
    """Estimate ``(L, sigma, G, delta)`` by probing the task in the box ``center +- radius``.

    ``radius`` may be per-coordinate; ``extra_points`` are probed as well.

    ``L`` is the largest gradient-difference quotient over worker objectives,
    taken along finite-difference power-iteration directions at each probe
    (a secant estimate of the top local curvature).  ``sigma^2`` and ``G^2``
    are the largest per-worker sample variance / second moment of the
    per-sample gradients.  ``delta`` is the smallest full loss seen during a
    short full-gradient pre-training run; it is an upper proxy for ``f*``.
    """
    if probe_count < 2:
        raise ValueError("need at least two probes")
    if task.n_workers == 0 or any(p.size == 0 for p in task.partitions):
        raise ValueError("task has no samples")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    dim = task.dimension
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=np.float64)
    probes = center + rng.uniform(-1.0, 1.0, size=(probe_count, dim)) * radius
    probes[0] = center
    if extra_points is not None:
        probes = np.vstack([probes, np.asarray(extra_points, dtype=np.float64).reshape(-1, dim)])

    lipschitz = 0.0
    sigma_sq = 0.0
    second = 0.0
    for x in probes:
        for n, samples in enumerate(task.partitions):
            grads = task.sample_gradients(x, samples)
            mean = grads.mean(axis=0)
            sigma_sq = max(sigma_sq, float(np.mean(np.sum((grads - mean) ** 2, axis=1))))
            second = max(second, float(np.mean(np.sum(grads**2, axis=1))))
            v = rng.normal(size=dim)
            for _ in range(power_steps):
                v /= np.linalg.norm(v)
                diff = task.worker_gradient(x + fd_step * v, n) - mean
                ratio = float(np.linalg.norm(diff)) / fd_step
                lipschitz = max(lipschitz, ratio)
                if ratio == 0.0:
                    break
                v = diff
    # secant pairs between probes catch curvature away from the probe points
    for x, y in zip(probes[:-1], probes[1:]):
        gap = float(np.linalg.norm(x - y))
        if gap == 0.0:
            continue
        for n in range(task.n_workers):
            lipschitz = max(lipschitz, float(np.linalg.norm(task.worker_gradient(x, n) - task.worker_gradient(y, n))) / gap)

    x = center.copy()
    delta = task.global_loss(x)
    step = 1.0 / lipschitz if lipschitz > 0 else 1.0
    for _ in range(pretrain_steps):
        x = x - step * task.global_gradient(x)
        delta = min(delta, task.global_loss(x))
    return ProblemConstants(lipschitz, float(np.sqrt(sigma_sq)), float(np.sqrt(second)), delta)


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_trace(trace: RunTrace, stream: io.TextIOBase, config_digest: str = "") -> None:
    """Line-oriented trace: ``#`` header lines, then ``k0,k,grad_sq_norm`` records."""
    p = trace.params
    stream.write(f"# seed={trace.seed}\n")
    stream.write("# params=" + json.dumps({"K0": int(p.k0), "K": [int(v) for v in p.k], "B": int(p.batch)}) + "\n")
    stream.write(f"# config_hash={config_digest}\n")
    stream.write("k0,k,grad_sq_norm\n")
    for i, row in enumerate(trace.grad_sq_norms):
        for j, value in enumerate(row):
            stream.write(f"{i + 1},{j + 1},{value:.12g}\n")


def read_trace(stream: io.TextIOBase) -> tuple[dict, np.ndarray]:
    header = {}
    rows = []
    for line in stream:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key] = json.loads(value) if key == "params" else value
        elif not line.startswith("k0"):
            k0, k, value = line.split(",")
            rows.append((int(k0), int(k), float(value)))
    if "seed" in header:
        header["seed"] = int(header["seed"])
    k0_max = max(r[0] for r in rows)
    k_max = max(r[1] for r in rows)
    out = np.full((k0_max, k_max), np.nan)
    for k0, k, value in rows:
        out[k0 - 1, k - 1] = value
    return header, out


def model_to_bytes(x: np.ndarray) -> bytes:
    """16-byte header (magic, uint32 version, uint64 D; little-endian) then float64 values."""
    x = np.asarray(x, dtype="<f8")
    return MODEL_MAGIC + struct.pack("<IQ", MODEL_VERSION, x.size) + x.tobytes()


def model_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 16 or blob[:4] != MODEL_MAGIC:
        raise ValueError("not a model blob (bad magic)")
    version, dim = struct.unpack("<IQ", blob[4:16])
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model blob version {version}")
    if len(blob) != 16 + 8 * dim:
        raise ValueError(f"model blob truncated: expected {16 + 8 * dim} bytes, got {len(blob)}")
    return np.frombuffer(blob[16:], dtype="<f8").astype(np.float64)
