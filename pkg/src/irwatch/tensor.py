"""Dense arrays and the five primitive kernels everything else builds on.

Tensors are numpy ndarrays in row-major (height, width, channels) layout.
float32 is the working precision; float64 is available for test oracles.
Convolution is fixed 3x3 / stride 1 / no padding and pooling is 2x2 stride 2:
neither is stated by the source material, but this is the unique combination
that reproduces the published size and MAC figures (see README).

All operations are pure functions: no aliasing of inputs, bit-identical
outputs for identical inputs.
"""
from __future__ import annotations

import numpy as np

from . import backend

Tensor = np.ndarray

DEFAULT_DTYPE = np.float32
ORACLE_DTYPE = np.float64
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def make_tensor(data, shape=None, dtype=DEFAULT_DTYPE) -> Tensor:
    """Build a tensor from external input, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    if shape is not None:
        if int(np.prod(shape)) != arr.size:
            raise ValueError(f"shape {tuple(shape)} does not hold {arr.size} values")
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def _check_float(name: str, arr: Tensor) -> None:
    if arr.dtype not in _FLOAT_DTYPES:
        raise ValueError(f"{name} must be float32 or float64, got {arr.dtype}")


def conv2d_valid(input: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """3x3 valid convolution: (h,w,cin) * (3,3,cin,cout) -> (h-2,w-2,cout)."""
    _check_float("input", input)
    if input.ndim != 3:
        raise ValueError(f"input must be (h,w,cin), got shape {input.shape}")
    h, w, cin = input.shape
    if h < 3 or w < 3:
        raise ValueError(f"input spatial size {h}x{w} too small for 3x3 kernel")
    if kernels.ndim != 4 or kernels.shape[:3] != (3, 3, cin):
        raise ValueError(
            f"kernels must be (3,3,{cin},cout), got shape {kernels.shape}"
        )
    cout = kernels.shape[3]
    if bias.shape != (cout,):
        raise ValueError(f"bias must be ({cout},), got shape {bias.shape}")
    if kernels.dtype != input.dtype or bias.dtype != input.dtype:
        raise ValueError("input, kernels and bias must share one dtype")
    k = backend.active()
    return k.conv2d_fwd(np.ascontiguousarray(input[None]), kernels, bias)[0]


def maxpool2x2(input: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pool, stride 2; odd trailing row/col dropped."""
    _check_float("input", input)
    if input.ndim != 3:
        raise ValueError(f"input must be (h,w,c), got shape {input.shape}")
    h, w, _ = input.shape
    if h < 2 or w < 2:
        raise ValueError(f"input spatial size {h}x{w} too small for 2x2 pooling")
    k = backend.active()
    out, _ = k.maxpool2_fwd(np.ascontiguousarray(input[None]))
    return out[0]


def dense(input: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Fully connected layer: (n,) x (n,m) + (m,) -> (m,)."""
    _check_float("input", input)
    if input.ndim != 1:
        raise ValueError(f"input must be 1-D, got shape {input.shape}")
    n = input.shape[0]
    if weights.ndim != 2 or weights.shape[0] != n:
        raise ValueError(f"weights must be ({n},m), got shape {weights.shape}")
    m = weights.shape[1]
    if bias.shape != (m,):
        raise ValueError(f"bias must be ({m},), got shape {bias.shape}")
    if weights.dtype != input.dtype or bias.dtype != input.dtype:
        raise ValueError("input, weights and bias must share one dtype")
    k = backend.active()
    return k.dense_fwd(np.ascontiguousarray(input[None]), weights, bias)[0]


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, x.dtype.type(0))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign for stability; output stays strictly inside (0, 1)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
