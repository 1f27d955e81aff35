"""Dense float32 kernels used by the transformer forward pass.

All operations are pure functions over numpy float32 arrays: given the
same inputs they return bit-identical outputs, regardless of how many
threads call them concurrently. Accumulation happens in float32; there
is no autodiff, broadcasting beyond what the encoder needs, or support
for other dtypes.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "as_tensor",
    "matmul",
    "softmax_rows",
    "layer_norm",
    "gelu",
    "linear",
]

# A Tensor is a row-major numpy array of 32-bit floats. Shapes are
# explicit; data length always equals the product of the shape.
Tensor = np.ndarray

_F32 = np.float32

# 1/sqrt(2), rounded to float32 once so gelu is reproducible bit for bit.
_INV_SQRT2 = _F32(0.7071067811865476)


def as_tensor(values, shape=None) -> Tensor:
    """Coerce `values` to a contiguous float32 array, optionally reshaped."""
    arr = np.asarray(values, dtype=_F32)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [m, k] and b [k, n].

    The reduction order is fixed by the BLAS kernel for a given pair of
    shapes, so repeated calls return bit-identical results independent
    of caller-side threading.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ValueError(f"softmax_rows needs a non-empty last axis, got shape {x.shape}")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each last-axis slice to zero mean / unit variance, then
    scale by gamma and shift by beta.

    Variance is the biased (1/d) estimator; eps guards degenerate slices.
    """
    x = as_tensor(x)
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last dim {d}"
        )
    mean = x.mean(axis=-1, keepdims=True, dtype=_F32)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True, dtype=_F32)
    return centered / np.sqrt(var + _F32(eps)) * gamma + beta


def gelu(x: Tensor) -> Tensor:
    """Exact erf-based GELU, x * Phi(x), elementwise."""
    x = as_tensor(x)
    out = x * _F32(0.5) * (_F32(1.0) + erf(x * _INV_SQRT2))
    return out.reshape(x.shape)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x @ w.T + b with w [n, k] applied over the last axis of x."""
    x = as_tensor(x)
    w = as_tensor(w)
    b = as_tensor(b)
    if w.ndim != 2 or b.shape != (w.shape[0],):
        raise ValueError(f"linear weight/bias shapes do not conform: {w.shape}, {b.shape}")
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear shape mismatch: x {x.shape} vs w {w.shape}")
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    out = matmul(flat, np.ascontiguousarray(w.T)) + b
    return out.reshape(*lead, w.shape[0])
