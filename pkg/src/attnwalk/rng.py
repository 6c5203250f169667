"""Seed-stable random streams.

Every Monte Carlo unit (walker, path) gets its own PCG64 generator keyed by
``(seed, index)`` through :class:`numpy.random.SeedSequence`, so results do not
depend on execution order. Gaussian draws use numpy's ziggurat transform,
uniform draws the 53-bit float conversion; both are fixed for a given numpy
major version.
"""

import numpy as np


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent generator for unit ``index`` of a run seeded with ``seed``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be nonnegative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


def uniforms(seed: int, count: int, size: int) -> np.ndarray:
    """``(count, size)`` uniforms on [0, 1); row i comes from ``stream(seed, i)``."""
    out = np.empty((count, size))
    for i in range(count):
        out[i] = stream(seed, i).random(size)
    return out


def normals(seed: int, count: int, size: int) -> np.ndarray:
    """``(count, size)`` standard normals; row i comes from ``stream(seed, i)``."""
    out = np.empty((count, size))
    for i in range(count):
        out[i] = stream(seed, i).standard_normal(size)
    return out
