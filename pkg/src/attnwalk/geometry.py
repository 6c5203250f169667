"""Layer normalization and the radius-sqrt(d) hypersphere it maps tokens onto."""

from dataclasses import dataclass

import numpy as np

from attnwalk.errors import NotOnSphere, ShapeMismatch, ZeroVariance

SPHERE_TOL = 1e-9


@dataclass(frozen=True)
class LayerNormParams:
    """Scalar affine parameters and variance floor for :func:`layer_norm`.

    ``eps=0`` gives the exact sphere; training code usually wants a small
    floor such as 1e-12.
    """

    gain: float = 1.0
    bias: float = 0.0
    eps: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.gain) and np.isfinite(self.bias)):
            raise ValueError("gain and bias must be finite")
        if not self.eps >= 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")


@dataclass(frozen=True)
class TokenMatrix:
    """An ``n x d`` block of token embeddings, one token per row."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 2:
            raise ShapeMismatch(f"expected n x d with n >= 1, d >= 2; got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("token matrix has non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def on_sphere(self) -> bool:
        return assert_on_sphere(self.data)


def layer_norm(v, params: LayerNormParams = LayerNormParams()) -> np.ndarray:
    """Normalize along the last axis with population statistics.

    Works on a single d-vector or any stack of them. With ``eps=0`` a
    constant vector raises :class:`ZeroVariance`.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < 2:
        raise ShapeMismatch("layer_norm needs d >= 2")
    centered = v - v.mean(axis=-1, keepdims=True)
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    if params.eps == 0 and np.any(var == 0):
        raise ZeroVariance("constant input has zero variance and eps = 0")
    return params.gain * centered / np.sqrt(var + params.eps) + params.bias


def layer_norm_backward(v, dw, params: LayerNormParams = LayerNormParams()) -> np.ndarray:
    """Gradient of ``layer_norm`` w.r.t. ``v`` given the upstream gradient ``dw``."""
    v = np.asarray(v, dtype=np.float64)
    dw = np.asarray(dw, dtype=np.float64)
    if v.shape != dw.shape:
        raise ShapeMismatch(f"v {v.shape} vs dw {dw.shape}")
    centered = v - v.mean(axis=-1, keepdims=True)
    sigma = np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + params.eps)
    xhat = centered / sigma
    g = params.gain * dw
    return (
        g
        - g.mean(axis=-1, keepdims=True)
        - xhat * np.mean(g * xhat, axis=-1, keepdims=True)
    ) / sigma


def assert_on_sphere(x, tol: float = SPHERE_TOL) -> bool:
    """True iff every row norm is within ``tol * sqrt(d)`` of ``sqrt(d)``."""
    x = np.asarray(x, dtype=np.float64)
    radius = np.sqrt(x.shape[-1])
    norms = np.linalg.norm(x, axis=-1)
    return bool(np.all(np.abs(norms - radius) <= tol * radius))


def dot_from_distance(v_i, v_j) -> float:
    """Inner product of two on-sphere tokens recovered from their distance.

    On the radius-sqrt(d) sphere ``v_i . v_j = (2d - |v_i - v_j|^2) / 2``.
    """
    v_i = np.asarray(v_i, dtype=np.float64)
    v_j = np.asarray(v_j, dtype=np.float64)
    if v_i.shape != v_j.shape or v_i.ndim != 1:
        raise ShapeMismatch(f"expected two d-vectors, got {v_i.shape} and {v_j.shape}")
    if not assert_on_sphere(np.stack([v_i, v_j])):
        raise NotOnSphere("dot_from_distance requires both vectors on the sqrt(d) sphere")
    d = v_i.shape[0]
    diff = v_i - v_j
    return float((2 * d - diff @ diff) / 2)
