"""Independent reference computations used to cross-check the fast paths.

Nothing here calls into the code it is meant to check.
"""

import math

import numpy as np


def central_difference(f, x, step: float = 1e-6) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f(x)
        flat[i] = keep - step
        lo = f(x)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def central_difference_jacobian(f, x, step: float = 1e-6) -> np.ndarray:
    """Jacobian ``J[i, j] = d f_i / d x_j`` of a vector map by central differences."""
    x = np.array(x, dtype=np.float64)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * step))
    return np.stack(cols, axis=1)


def naive_softmax(row) -> list[float]:
    top = max(row)
    ex = [math.exp(v - top) for v in row]
    total = math.fsum(ex)
    return [e / total for e in ex]


def naive_attention(x) -> tuple[np.ndarray, np.ndarray]:
    """Loop-based ``P = softmax(x x^T / sqrt(d))`` and ``y = P x``."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    scale = math.sqrt(d)
    p = np.empty((n, n))
    for i in range(n):
        logits = [math.fsum(x[i, k] * x[j, k] for k in range(d)) / scale for j in range(n)]
        p[i] = naive_softmax(logits)
    y = np.array([[math.fsum(p[i, j] * x[j, k] for j in range(n)) for k in range(d)] for i in range(n)])
    return p, y


def dense_fisher(a, g, gamma: float) -> np.ndarray:
    """Materialized ``mean (g g^T) (x) (a a^T) + gamma I`` under row-major vec.

    ``a`` is (N, m) or (N, k, m); ``g`` likewise with p. Per-position terms
    are summed within a sample.
    """
    a = np.asarray(a, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if a.ndim == 2:
        a, g = a[:, None, :], g[:, None, :]
    n_batch, k, m = a.shape
    p = g.shape[2]
    f = np.zeros((p * m, p * m))
    for s in range(n_batch):
        for t in range(k):
            f += np.kron(np.outer(g[s, t], g[s, t]), np.outer(a[s, t], a[s, t]))
    return f / n_batch + gamma * np.eye(p * m)


def dense_solve(a, g, gamma: float, b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    return np.linalg.solve(dense_fisher(a, g, gamma), b.reshape(-1)).reshape(b.shape)


def normal_cdf(x: float, sigma: float) -> float:
    return 0.5 * (1.0 + math.erf(x / (sigma * math.sqrt(2.0))))
