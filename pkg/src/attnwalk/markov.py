"""Transition matrices, random walks and the diffusion limit of the lattice walk.

Row convention: ``m[i, j] = Pr(j | i)``; distributions evolve as ``p <- m.T @ p``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from attnwalk import rng
from attnwalk.errors import NegativeEntry, NotADistribution, RowSumViolation, ShapeMismatch

ROW_TOL = 1e-12
CLAMP_TOL = 1e-15


@dataclass(frozen=True)
class TransitionMatrix:
    """A validated row-stochastic matrix. Build it with :func:`validate_transition`."""

    m: np.ndarray

    @property
    def n(self) -> int:
        return self.m.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.m if dtype is None else self.m.astype(dtype)


def validate_transition(m, tol: float = ROW_TOL) -> TransitionMatrix:
    """Check nonnegativity and unit row sums; clamp rounding-level negatives to 0."""
    if isinstance(m, TransitionMatrix):
        m = m.m
    m = np.array(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ShapeMismatch(f"transition matrix must be square and nonempty, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("transition matrix has non-finite entries")
    if np.any(m < -CLAMP_TOL):
        i, j = np.argwhere(m < -CLAMP_TOL)[0]
        raise NegativeEntry(f"entry ({i}, {j}) = {float(m[i, j])!r} is negative")
    m = np.clip(m, 0.0, 1.0)
    sums = m.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise RowSumViolation(
            f"row {bad[0]} sums to {float(sums[bad[0]])!r}, outside 1 +/- {tol:g}"
        )
    m.setflags(write=False)
    return TransitionMatrix(m)


def k_step(m: TransitionMatrix, k: int) -> TransitionMatrix:
    """``M^k``, revalidated at 1e-10 to absorb accumulated rounding."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    return validate_transition(np.linalg.matrix_power(np.asarray(m), int(k)), tol=1e-10)


def _check_distribution(p, n: int, tol: float) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (n,):
        raise ShapeMismatch(f"distribution has shape {p.shape}, expected ({n},)")
    if np.any(p < -CLAMP_TOL) or abs(p.sum() - 1.0) > tol:
        raise NotADistribution(f"not a distribution (sum={p.sum()!r})")
    return p


def evolve_distribution(m: TransitionMatrix, p0, t: int) -> np.ndarray:
    """Apply ``p <- M^T p`` for ``t`` steps."""
    mt = np.asarray(m).T
    p = _check_distribution(p0, mt.shape[0], ROW_TOL)
    if t < 0:
        raise ValueError("t must be nonnegative")
    for _ in range(int(t)):
        p = mt @ p
    return _check_distribution(p, mt.shape[0], 1e-10)


def _step(cdf: np.ndarray, states: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse CDF: first j with u < cdf[state, j]
    nxt = np.sum(u[:, None] >= cdf[states], axis=1)
    return np.minimum(nxt, cdf.shape[1] - 1)


def sample_walks(m: TransitionMatrix, starts, steps: int, seed: int) -> np.ndarray:
    """``(walkers, steps + 1)`` state sequences; walker i uses ``rng.stream(seed, i)``."""
    m = np.asarray(m)
    starts = np.atleast_1d(np.asarray(starts, dtype=np.int64))
    if np.any(starts < 0) or np.any(starts >= m.shape[0]):
        raise IndexError("start state out of range")
    cdf = np.cumsum(m, axis=1)
    u = rng.uniforms(seed, starts.size, steps)
    path = np.empty((starts.size, steps + 1), dtype=np.int64)
    path[:, 0] = starts
    for k in range(steps):
        path[:, k + 1] = _step(cdf, path[:, k], u[:, k])
    return path


def sample_walk(m: TransitionMatrix, start: int, steps: int, seed: int) -> np.ndarray:
    """One walk of ``steps`` transitions; identical to walker 0 of :func:`sample_walks`."""
    return sample_walks(m, [start], steps, seed)[0]


def empirical_k_step(m: TransitionMatrix, k: int, walks_per_state: int, seed: int) -> np.ndarray:
    """Monte Carlo estimate of ``M^k`` from ``walks_per_state`` walks out of every state."""
    n = np.asarray(m).shape[0]
    starts = np.repeat(np.arange(n), walks_per_state)
    ends = sample_walks(m, starts, k, seed)[:, -1]
    counts = np.zeros((n, n))
    np.add.at(counts, (starts, ends), 1.0)
    return counts / walks_per_state


@dataclass(frozen=True)
class DiffusionSpec:
    """Symmetric +/-h lattice walk with time step ``tau``; ``D = h^2 / (2 tau)``."""

    h: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        if not (self.h > 0 and self.tau > 0):
            raise ValueError("h and tau must be positive")

    @property
    def D(self) -> float:
        return self.h**2 / (2.0 * self.tau)


@dataclass
class DiffusionReport:
    ks_statistic: float
    empirical_variance: float
    analytic_variance: float
    D: float
    T: float
    positions: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        return {
            "ks_statistic": self.ks_statistic,
            "empirical_variance": self.empirical_variance,
            "analytic_variance": self.analytic_variance,
            "D": self.D,
            "T": self.T,
        }


def lattice_terminal_positions(spec: DiffusionSpec, n_steps: int, n_walkers: int, seed: int) -> np.ndarray:
    """Terminal positions of symmetric walks, one random bit per step.

    Walker i draws its step signs from ``rng.stream(seed, i)``.
    """
    words = -(-n_steps // 64)
    tail = n_steps - 64 * (words - 1)
    mask = np.uint64((1 << tail) - 1) if tail < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    ups = np.empty(n_walkers, dtype=np.int64)
    for i in range(n_walkers):
        bits = rng.stream(seed, i).integers(0, 2**64, size=words, dtype=np.uint64, endpoint=False)
        bits[-1] &= mask
        ups[i] = int(np.bitwise_count(bits).sum())
    return spec.h * (2.0 * ups - n_steps)


def ks_budget(n_steps: int, n_walkers: int) -> float:
    """KS tolerance: lattice half-atom ``1/sqrt(2 pi n)`` plus the 1% KS critical value.

    Never below 0.02, the budget used at ``n_steps=1e4, n_walkers=1e5``.
    """
    return max(0.02, 1.0 / np.sqrt(2 * np.pi * n_steps) + 1.63 / np.sqrt(n_walkers))


def diffusion_limit_check(spec: DiffusionSpec, n_steps: int, n_walkers: int, seed: int) -> DiffusionReport:
    """Compare terminal positions of the lattice walk with the heat-kernel Gaussian.

    The target is ``N(0, 2 D T)`` with ``T = n_steps * tau``, which equals
    ``N(0, n_steps h^2)`` under ``D = h^2 / (2 tau)``.
    """
    if n_steps < 100 or n_walkers < 10_000:
        raise ValueError("need n_steps >= 100 and n_walkers >= 1e4")
    x = lattice_terminal_positions(spec, n_steps, n_walkers, seed)
    T = n_steps * spec.tau
    ks = stats.kstest(x, stats.norm(loc=0.0, scale=np.sqrt(2.0 * spec.D * T)).cdf).statistic
    return DiffusionReport(
        ks_statistic=float(ks),
        empirical_variance=float(np.var(x)),
        analytic_variance=n_steps * spec.h**2,
        D=spec.D,
        T=T,
        positions=x,
    )
