"""Independent reference implementations used as test oracles.

Written directly from the model definitions with plain loops, sharing no
code with the package beyond the quantizer (tested separately) and the task
data arrays.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# cost model


def _nodes(profile):
    return profile.server, list(profile.workers)


def time_oracle(k0, k, b, profile) -> float:
    server, workers = _nodes(profile)
    compute = max(w.cycles / w.cpu_freq * kn for w, kn in zip(workers, k))
    upload = max(w.quant_bits / w.tx_rate for w in workers)
    return k0 * (b * compute + server.cycles / server.cpu_freq + upload + server.quant_bits / server.tx_rate)


def energy_oracle(k0, k, b, profile) -> float:
    server, workers = _nodes(profile)
    compute = sum(w.capacitance * w.cycles * w.cpu_freq**2 * kn for w, kn in zip(workers, k))
    comm = sum(node.tx_power * node.quant_bits / node.tx_rate for node in [server, *workers])
    return k0 * (b * compute + server.capacitance * server.cycles * server.cpu_freq**2 + comm)


def error_oracle(k0, k, b, profile, L, sigma, G, gamma, gap) -> float:
    server, workers = _nodes(profile)
    n = len(workers)
    q0 = server.quant_variance
    c1 = 2 * n * gap / gamma
    c2 = 4 * gamma**2 * G**2 * L**2
    c3 = L * gamma * sigma**2 / n
    total = sum(k)
    quant = sum((q0 + w.quant_variance + q0 * w.quant_variance) * kn**2 for w, kn in zip(workers, k))
    return c1 / (k0 * total) + c2 * max(k) ** 2 + c3 / b + 2 * L * gamma * G**2 * quant / total


# ---------------------------------------------------------------------------
# training loops


def _stream(seed, *path):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=path))


def prsgd_loop(points, partitions, k0, k, gamma, seed, init_scale=1.0):
    """Plain local SGD with batch size one on ``F(x; xi) = |x - xi|^2 / 2``, exact communication.

    Returns the list of global models after each round, starting with ``x0``.
    """
    dim = points.shape[1]
    x = init_scale * _stream(seed, 0).standard_normal(dim)
    x = np.zeros(dim) + x  # initial broadcast is exact
    models = [x]
    for r in range(1, k0 + 1):
        deltas = []
        for n, part in enumerate(partitions):
            rng = _stream(seed, 2, r, n + 1)
            local = x.copy()
            for _ in range(k[n]):
                i = part[rng.choice(len(part), size=1, replace=False)[0]]
                local = local - gamma * (local - points[i])
            deltas.append(local - x)
        total = deltas[0]
        for d in deltas[1:]:
            total = total + d
        x = x + total / len(partitions)
        models.append(x)
    return models


def lhs_oracle(points, partitions, k0, k, batch, gamma, seed, quant, quantize_fn, init_scale=1.0):
    """Brute-force left side of the bound for the quadratic task.

    Replays the algorithm step by step, keeps every worker's local iterates,
    forms the averaged virtual iterates (a worker that has finished holds its
    last iterate) and sums weighted full-gradient norms.
    """
    dim = points.shape[1]
    n = len(partitions)
    k_max = max(k)
    data_mean = np.mean([points[p].mean(axis=0) for p in partitions], axis=0)

    x0 = init_scale * _stream(seed, 0).standard_normal(dim)
    broadcast = quantize_fn(x0, quant[0], _stream(seed, 1, 0))
    x_hat = np.zeros(dim)
    total = 0.0
    for r in range(1, k0 + 1):
        x_hat = x_hat + broadcast
        paths = []
        uploads = []
        for w, part in enumerate(partitions):
            rng = _stream(seed, 2, r, w + 1)
            path = [x_hat.copy()]
            for _ in range(k[w]):
                idx = part[rng.choice(len(part), size=batch, replace=False)]
                cur = path[-1]
                path.append(cur - gamma * (cur - points[idx].mean(axis=0)))
            uploads.append(quantize_fn(path[-1] - x_hat, quant[w + 1], rng))
            paths.append(path)
        for step in range(1, k_max + 1):
            active = sum(1 for kw in k if step <= kw)
            avg = np.mean([p[min(step - 1, len(p) - 1)] for p in paths], axis=0)
            grad = avg - data_mean
            total += active / n * float(grad @ grad)
        delta = uploads[0]
        for u in uploads[1:]:
            delta = delta + u
        broadcast = quantize_fn(delta / n, quant[0], _stream(seed, 1, r))
    return total / (k0 * sum(k) / n)


# ---------------------------------------------------------------------------
# geometric programs


def cvxpy_gp_value(gp, solver: str = "SCS", **solver_opts) -> tuple[float, np.ndarray]:
    """Solve a GP with cvxpy's disciplined geometric programming mode."""
    import cvxpy as cp

    x = cp.Variable(gp.n_vars, pos=True)

    def expr(p):
        terms = []
        for mono in p.terms:
            t = mono.coefficient
            for i, a in enumerate(mono.exponents):
                if a != 0:
                    t = t * x[i] ** float(a)
            terms.append(t)
        return cp.sum(cp.hstack(terms)) if len(terms) > 1 else terms[0]

    prob = cp.Problem(cp.Minimize(expr(gp.objective)), [expr(c) <= 1 for c in gp.constraints])
    value = prob.solve(gp=True, solver=solver, **solver_opts)
    return float(value), np.asarray(x.value)


def agm_monomial_value(k, beta) -> float:
    return math.prod((kn / bn) ** bn for kn, bn in zip(k, beta))
