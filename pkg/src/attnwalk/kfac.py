"""Matrix-free natural gradient for one layer: Fisher-vector products and CG.

A layer with weight ``W`` of shape ``(p, m)`` maps input activations ``a``
(length m) to outputs whose loss gradient is ``g`` (length p). The damped
Fisher block is approximated by the batch mean of ``(g g^T) (x) (a a^T)`` plus
``gamma * I`` and is only ever applied to a matrix, never formed.
"""

from dataclasses import dataclass, field

import numpy as np

from attnwalk.errors import BreakdownError, ShapeMismatch

DEFAULT_GAMMA = 1e-2
DEFAULT_REL_TOL = 1e-10
MAX_ITERS_CAP = 50


@dataclass(frozen=True)
class KroneckerCapture:
    """Activation ``a`` and output gradient ``g`` for one sample.

    Both may also be stacked per position, ``a`` as ``(k, m)`` and ``g`` as
    ``(k, p)``, for layers applied at k positions with shared weights; their
    contributions are summed within the sample.
    """

    a: np.ndarray
    g: np.ndarray


class DampedFisher:
    """Batch of captures plus damping ``gamma``; ``A`` is (N, k, m), ``G`` is (N, k, p)."""

    def __init__(self, a, g, gamma: float = DEFAULT_GAMMA):
        a = np.asarray(a, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, None, :]
        if g.ndim == 2:
            g = g[:, None, :]
        if a.ndim != 3 or g.ndim != 3 or a.shape[:2] != g.shape[:2]:
            raise ShapeMismatch(f"captures disagree: a {a.shape}, g {g.shape}")
        if a.shape[0] == 0:
            raise ValueError("need at least one capture")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(g))):
            raise ValueError("captures must be finite")
        if not gamma > 0:
            raise ValueError(f"damping must be positive, got {gamma}")
        self.A = a
        self.G = g
        self.gamma = float(gamma)

    @classmethod
    def from_captures(cls, captures, gamma: float = DEFAULT_GAMMA) -> "DampedFisher":
        captures = list(captures)
        return cls(
            np.stack([np.atleast_2d(c.a) for c in captures]),
            np.stack([np.atleast_2d(c.g) for c in captures]),
            gamma,
        )

    @property
    def shape(self) -> tuple[int, int]:
        """Shape ``(p, m)`` of the weight block this Fisher acts on."""
        return self.G.shape[2], self.A.shape[2]

    @property
    def batch_size(self) -> int:
        return self.A.shape[0]


def fisher_vector_product(fisher: DampedFisher, v) -> np.ndarray:
    """``mean_n sum_k g (g^T v a) a^T + gamma v`` without forming the Fisher."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != fisher.shape:
        raise ShapeMismatch(f"v has shape {v.shape}, Fisher acts on {fisher.shape}")
    theta = np.einsum("nkp,pm,nkm->nk", fisher.G, v, fisher.A)
    return np.einsum("nkp,nk,nkm->pm", fisher.G, theta, fisher.A) / fisher.batch_size + fisher.gamma * v


@dataclass
class CgState:
    x: np.ndarray
    r: np.ndarray
    p_dir: np.ndarray
    rho: float


@dataclass
class CgResult:
    x: np.ndarray
    iterations: int
    final_residual: float
    residual_history: list[float] = field(default_factory=list)

    @property
    def best_history(self) -> list[float]:
        return list(np.minimum.accumulate(self.residual_history))


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int | None = None
    rel_tol: float = DEFAULT_REL_TOL
    reconjugate: bool = True


def _inner(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.vdot(u, v))


def cg_solve(
    fisher: DampedFisher,
    b,
    x0=None,
    max_iters: int | None = None,
    rel_tol: float = DEFAULT_REL_TOL,
    reconjugate: bool = True,
) -> CgResult:
    """Solve ``F_gamma x = b`` by conjugate gradient.

    Stops once ``|r| <= rel_tol * |b|`` or after ``max_iters`` iterations
    (default ``min(p*m, 50)``). The CG residual norm is not monotone, so the
    iterate with the smallest residual seen is returned; ``best_history``
    is therefore non-increasing.

    With ``reconjugate`` each new direction is made F-conjugate to all
    earlier ones using their stored products ``F p_j``. In exact arithmetic
    this changes nothing; in floating point it keeps the finite-termination
    property, at the cost of keeping ``max_iters`` direction pairs. The
    solve also ends early once a re-conjugated direction no longer carries
    the residual, which happens only when the attainable accuracy has been
    reached. Set ``reconjugate=False`` for the bare two-term recurrence.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape != fisher.shape:
        raise ShapeMismatch(f"b has shape {b.shape}, Fisher acts on {fisher.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side must be finite")
    p, m = fisher.shape
    if max_iters is None:
        max_iters = min(p * m, MAX_ITERS_CAP)
    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return CgResult(np.zeros_like(b), 0, 0.0, [0.0])

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != b.shape:
        raise ShapeMismatch(f"x0 has shape {x.shape}, expected {b.shape}")
    r = b - fisher_vector_product(fisher, x) if x0 is not None else b.copy()
    state = CgState(x=x, r=r, p_dir=r.copy(), rho=_inner(r, r))
    stop = (rel_tol * b_norm) ** 2
    history = [float(np.sqrt(state.rho))]
    best_x, best_rho = state.x.copy(), state.rho
    basis: list[tuple[np.ndarray, np.ndarray, float]] = []
    k = 0
    while k < max_iters and state.rho > stop:
        u = fisher_vector_product(fisher, state.p_dir)
        s = _inner(state.p_dir, u)
        if not s > 0:
            raise BreakdownError(f"non-positive curvature {s!r} at iteration {k}")
        alpha = state.rho / s
        state.x = state.x + alpha * state.p_dir
        state.r = state.r - alpha * u
        rho_next = _inner(state.r, state.r)
        k += 1
        history.append(float(np.sqrt(rho_next)))
        if rho_next < best_rho:
            best_x, best_rho = state.x.copy(), rho_next
        if rho_next <= stop:
            state.rho = rho_next
            break
        if reconjugate:
            basis.append((state.p_dir, u, s))
            direction = state.r.copy()
            for p_j, u_j, s_j in basis:
                direction -= (_inner(direction, u_j) / s_j) * p_j
            # exact CG keeps p . r = rho; losing it means the Krylov space is exhausted
            if not _inner(direction, state.r) >= 0.5 * rho_next:
                break
            state.p_dir = direction
        else:
            state.p_dir = state.r + (rho_next / state.rho) * state.p_dir
        state.rho = rho_next
    return CgResult(best_x, k, float(np.sqrt(best_rho)), history)


def natural_gradient_step(theta, grad, fisher: DampedFisher, eta: float, solver: SolverConfig = SolverConfig(), warm_start=None) -> tuple[np.ndarray, CgResult]:
    """Descend along ``F_gamma^{-1} grad``: ``theta' = theta - eta x``.

    Returns the new parameters and the CG result, whose ``x`` can seed the
    next solve.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    result = cg_solve(
        fisher, grad, x0=warm_start, max_iters=solver.max_iters, rel_tol=solver.rel_tol, reconjugate=solver.reconjugate
    )
    return theta - eta * result.x, result
