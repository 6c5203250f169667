"""Single-head self-attention with identity projections (Q = K = V = X).

All functions broadcast over leading batch axes: ``x`` may be ``(n, d)`` or
``(..., n, d)``.
"""

from dataclasses import dataclass

import numpy as np

from attnwalk.errors import NotADistribution, NotOnSphere, ShapeMismatch
from attnwalk.geometry import SPHERE_TOL, assert_on_sphere


@dataclass(frozen=True)
class AttentionOutput:
    y: np.ndarray
    p: np.ndarray
    logits: np.ndarray


def softmax(a, axis: int = -1) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    z = np.exp(a - a.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax_jacobian(s) -> np.ndarray:
    """``J[i, j] = s_i (delta_ij - s_j)`` for a probability vector ``s``."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1:
        raise ShapeMismatch("softmax_jacobian expects a single vector")
    if np.any(s < -1e-9) or abs(s.sum() - 1.0) > 1e-9:
        raise NotADistribution(f"not a probability vector (sum={s.sum()!r})")
    return np.diag(s) - np.outer(s, s)


def _check_tokens(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-2] < 1 or x.shape[-1] < 2:
        raise ShapeMismatch(f"expected (..., n, d) with d >= 2, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("tokens must be finite")
    return x


def attention_forward(x) -> AttentionOutput:
    """``P = softmax(x x^T / sqrt(d))`` row-wise and ``y = P x``."""
    x = _check_tokens(x)
    d = x.shape[-1]
    logits = x @ np.swapaxes(x, -1, -2) / np.sqrt(d)
    p = softmax(logits, axis=-1)
    return AttentionOutput(y=p @ x, p=p, logits=logits)


def attention_backward(x, dy, out: AttentionOutput | None = None) -> np.ndarray:
    """Gradient w.r.t. ``x`` through the query, key and value paths.

    ``out`` may be passed to reuse a forward result for the same ``x``.
    """
    x = _check_tokens(x)
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != x.shape:
        raise ShapeMismatch(f"dy {dy.shape} does not match x {x.shape}")
    if out is None:
        out = attention_forward(x)
    elif out.y.shape != x.shape:
        raise ShapeMismatch("forward output does not belong to x")
    p = out.p
    d = x.shape[-1]
    dx = np.swapaxes(p, -1, -2) @ dy  # value path
    dp = dy @ np.swapaxes(x, -1, -2)
    # row-wise softmax Jacobian: ds_i = J(p_i) dp_i
    ds = p * (dp - np.sum(p * dp, axis=-1, keepdims=True))
    dx += (ds + np.swapaxes(ds, -1, -2)) @ x / np.sqrt(d)
    return dx


def gaussian_kernel_rows(x, bandwidth: float | None = None) -> np.ndarray:
    """Row-normalized Gaussian kernel ``exp(-|v_i - v_j|^2 / bandwidth)``.

    The default bandwidth ``2 sqrt(d)`` makes this equal to the attention
    matrix for tokens on the radius-sqrt(d) sphere.
    """
    x = _check_tokens(x)
    if not assert_on_sphere(x, SPHERE_TOL):
        raise NotOnSphere("kernel form of attention only holds on the sqrt(d) sphere")
    d = x.shape[-1]
    if bandwidth is None:
        bandwidth = 2.0 * np.sqrt(d)
    diff = x[..., :, None, :] - x[..., None, :, :]
    sq = np.einsum("...ijk,...ijk->...ij", diff, diff)
    k = np.exp(-sq / bandwidth)
    return k / k.sum(axis=-1, keepdims=True)
