"""Learning tasks: per-sample loss/gradient oracles partitioned across workers."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit, log_expit, log_softmax, softmax


class Task:
    """A finite-sum learning problem split over ``N`` workers.

    Subclasses implement :meth:`sample_losses` and :meth:`sample_gradients`
    (one row per sample); :meth:`gradient` may be overridden with a batched
    mean when per-sample gradients are expensive.
    """

    #: exact optimum value of ``f`` when known
    f_star: float | None = None

    def __init__(self, dimension: int, partitions: Sequence[np.ndarray], cycles_per_sample: float | None = None):
        self.dimension = int(dimension)
        self.partitions = [np.asarray(p, dtype=np.intp) for p in partitions]
        self.cycles_per_sample = cycles_per_sample
        if not self.partitions:
            raise ValueError("task needs at least one worker")
        if any(p.size == 0 for p in self.partitions):
            raise ValueError("every worker needs at least one sample")
        joined = np.concatenate(self.partitions)
        if np.unique(joined).size != joined.size:
            raise ValueError("worker sample sets overlap")

    @property
    def n_workers(self) -> int:
        return len(self.partitions)

    @property
    def min_samples(self) -> int:
        return min(p.size for p in self.partitions)

    def sample_losses(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_gradients(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss(self, x, idx) -> float:
        return float(np.mean(self.sample_losses(np.asarray(x, dtype=np.float64), np.asarray(idx))))

    def gradient(self, x, idx) -> np.ndarray:
        """Mini-batch gradient ``mean_i grad F(x; xi_i)`` over sample indices ``idx``."""
        return np.mean(self.sample_gradients(np.asarray(x, dtype=np.float64), np.asarray(idx)), axis=0)

    def worker_loss(self, x, n: int) -> float:
        return self.loss(x, self.partitions[n])

    def worker_gradient(self, x, n: int) -> np.ndarray:
        return self.gradient(x, self.partitions[n])

    def global_loss(self, x) -> float:
        """``f(x) = (1/N) sum_n f_n(x)``."""
        return float(np.mean([self.worker_loss(x, n) for n in range(self.n_workers)]))

    def global_gradient(self, x) -> np.ndarray:
        total = np.zeros(self.dimension)
        for n in range(self.n_workers):
            total = total + self.worker_gradient(x, n)
        return total / self.n_workers


class QuadraticTask(Task):
    """``F(x; xi) = 0.5 * |x - xi|^2``; samples are the rows of ``points``."""

    def __init__(self, points, partitions, cycles_per_sample=None):
        self.points = np.asarray(points, dtype=np.float64)
        super().__init__(self.points.shape[1], partitions, cycles_per_sample)
        self.minimizer = np.mean([self.points[p].mean(axis=0) for p in self.partitions], axis=0)
        self.f_star = self.global_loss(self.minimizer)

    def sample_losses(self, x, idx):
        diff = x - self.points[idx]
        return 0.5 * np.einsum("ij,ij->i", diff, diff)

    def sample_gradients(self, x, idx):
        return x - self.points[idx]

    def gradient(self, x, idx):
        return x - self.points[idx].mean(axis=0)


class LogisticTask(Task):
    """Binary cross-entropy of a linear classifier; labels in ``{0, 1}``."""

    def __init__(self, features, labels, partitions, cycles_per_sample=None):
        self.features = np.asarray(features, dtype=np.float64)
        self.signs = 2.0 * np.asarray(labels, dtype=np.float64) - 1.0
        super().__init__(self.features.shape[1], partitions, cycles_per_sample)

    def sample_losses(self, x, idx):
        return -log_expit(self.signs[idx] * (self.features[idx] @ x))

    def sample_gradients(self, x, idx):
        a, y = self.features[idx], self.signs[idx]
        return (-y * expit(-y * (a @ x)))[:, None] * a

    def gradient(self, x, idx):
        a, y = self.features[idx], self.signs[idx]
        return a.T @ (-y * expit(-y * (a @ x))) / len(idx)


class MLPTask(Task):
    """One-hidden-layer sigmoid network with softmax cross-entropy, no biases.

    Parameters are packed as ``W1`` (``hidden x inputs``) followed by ``W2``
    (``classes x hidden``), so 784-128-10 gives ``D = 101632``.
    """

    def __init__(self, images, labels, partitions, hidden: int = 128, n_classes: int = 10,
                 cycles_per_sample=None):
        self.images = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
        self.labels = np.asarray(labels, dtype=np.intp)
        self.n_inputs = self.images.shape[1]
        self.hidden = hidden
        self.n_classes = n_classes
        super().__init__(hidden * self.n_inputs + n_classes * hidden, partitions, cycles_per_sample)

    def _unpack(self, x):
        split = self.hidden * self.n_inputs
        return x[:split].reshape(self.hidden, self.n_inputs), x[split:].reshape(self.n_classes, self.hidden)

    def _forward(self, x, idx):
        w1, w2 = self._unpack(x)
        a = self.images[idx]
        h = expit(a @ w1.T)
        return a, h, h @ w2.T

    def sample_losses(self, x, idx):
        _, _, logits = self._forward(x, idx)
        return -log_softmax(logits, axis=1)[np.arange(len(idx)), self.labels[idx]]

    def _deltas(self, x, idx):
        w1, w2 = self._unpack(x)
        a, h, logits = self._forward(x, idx)
        d2 = softmax(logits, axis=1)
        d2[np.arange(len(idx)), self.labels[idx]] -= 1.0
        d1 = (d2 @ w2) * h * (1.0 - h)
        return a, h, d1, d2

    def gradient(self, x, idx):
        idx = np.asarray(idx)
        a, h, d1, d2 = self._deltas(x, idx)
        return np.concatenate([(d1.T @ a).ravel(), (d2.T @ h).ravel()]) / len(idx)

    def sample_gradients(self, x, idx):
        a, h, d1, d2 = self._deltas(x, np.asarray(idx))
        g1 = np.einsum("bi,bj->bij", d1, a).reshape(len(idx), -1)
        g2 = np.einsum("bi,bj->bij", d2, h).reshape(len(idx), -1)
        return np.hstack([g1, g2])

    def accuracy(self, x, idx) -> float:
        _, _, logits = self._forward(x, np.asarray(idx))
        return float(np.mean(np.argmax(logits, axis=1) == self.labels[idx]))


def even_partition(n_samples: int, n_workers: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Seeded shuffle split into ``n_workers`` disjoint sets whose sizes differ by at most one."""
    if not 1 <= n_workers <= n_samples:
        raise ValueError(f"cannot split {n_samples} samples over {n_workers} workers")
    order = rng.permutation(n_samples)
    return [np.sort(part) for part in np.array_split(order, n_workers)]


def make_synthetic_task(kind: str, dimension: int, n_workers: int, samples_per_worker: int,
                        seed: int, spread: float = 1.0) -> Task:
    """Desk-scale i.i.d. task: ``"quadratic"`` (exact ``f*``) or ``"logistic"``."""
    if min(dimension, n_workers, samples_per_worker) < 1:
        raise ValueError("dimension, worker count and samples per worker must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    total = n_workers * samples_per_worker
    partitions = [np.arange(n * samples_per_worker, (n + 1) * samples_per_worker) for n in range(n_workers)]
    if kind == "quadratic":
        centre = rng.normal(size=dimension)
        points = centre + spread * rng.normal(size=(total, dimension))
        return QuadraticTask(points, partitions)
    if kind == "logistic":
        direction = rng.normal(size=dimension)
        direction /= np.linalg.norm(direction)
        labels = rng.integers(0, 2, size=total)
        features = np.outer(2.0 * labels - 1.0, direction) + spread * rng.normal(size=(total, dimension))
        features /= np.sqrt(dimension)
        return LogisticTask(features, labels, partitions)
    raise ValueError(f"unknown synthetic task kind {kind!r}")
