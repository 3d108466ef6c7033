"""Numpy implementations of the hot kernels.

This is the fallback backend; `irwatch._fastkernels` (Cython) implements the
same functions with plain loops. Float kernels are batched NHWC and accept
float32 or float64. Integer kernels compute exact int arithmetic, so both
backends produce bit-identical int8 results.

Weight layouts: conv kernels (3, 3, cin, cout); dense weights (fan_in, fan_out).
"""
from __future__ import annotations

import numpy as np

INT8_MIN = -128
INT8_MAX = 127
_INT32_MIN = -(1 << 31)
_INT32_MAX = (1 << 31) - 1


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N,H,W,C) -> (N,OH,OW,9*C) patches for a 3x3 valid convolution."""
    n, h, w, c = x.shape
    oh, ow = h - 2, w - 2
    cols = np.empty((n, oh, ow, 9, c), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            cols[:, :, :, di * 3 + dj, :] = x[:, di:di + oh, dj:dj + ow, :]
    return cols.reshape(n, oh, ow, 9 * c)


def conv2d_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    cin, cout = w.shape[2], w.shape[3]
    cols = _im2col(x)
    y = cols @ w.reshape(9 * cin, cout)
    y += b
    return y


def conv2d_bwd(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    n, h, wd, cin = x.shape
    oh, ow, cout = dy.shape[1], dy.shape[2], dy.shape[3]
    wm = w.reshape(9 * cin, cout)
    cols = _im2col(x)

    db = dy.sum(axis=(0, 1, 2))
    dw = np.tensordot(cols, dy, axes=([0, 1, 2], [0, 1, 2])).reshape(3, 3, cin, cout)

    dcols = (dy @ wm.T).reshape(n, oh, ow, 9, cin)
    dx = np.zeros_like(x)
    for di in range(3):
        for dj in range(3):
            dx[:, di:di + oh, dj:dj + ow, :] += dcols[:, :, :, di * 3 + dj, :]
    return dx, dw, db


def dense_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def dense_bwd(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


def _pool_windows(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    oh, ow = h // 2, w // 2
    v = x[:, :oh * 2, :ow * 2, :]
    return v.reshape(n, oh, 2, ow, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, oh, ow, 4, c)


def maxpool2_fwd(x: np.ndarray):
    """Non-overlapping 2x2 max pool; returns (y, argmax in-window index).

    Ties resolve to the first maximum in row-major window order, which fixes
    the gradient routing deterministically.
    """
    win = _pool_windows(x)
    idx = win.argmax(axis=3).astype(np.uint8)
    y = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return y, idx


def maxpool2_bwd(dy: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    n, oh, ow, c = dy.shape
    dwin = np.zeros((n, oh, ow, 4, c), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
    dx = np.zeros((n, h, w, c), dtype=dy.dtype)
    dv = dwin.reshape(n, oh, ow, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, oh * 2, ow * 2, c)
    dx[:, :oh * 2, :ow * 2, :] = dv
    return dx


def _requantize(acc: np.ndarray, m0: int, shift: int, zp_out: int) -> np.ndarray:
    """int32 accumulator -> int8: fixed-point multiply, round half away from
    zero, right shift, add zero point, clamp."""
    if np.any(acc < _INT32_MIN) or np.any(acc > _INT32_MAX):
        raise OverflowError("int32 accumulator overflow")
    p = acc.astype(np.int64) * np.int64(m0)
    if shift > 0:
        half = np.int64(1) << np.int64(shift - 1)
        mag = (np.abs(p) + half) >> np.int64(shift)
    else:
        mag = np.abs(p)
    q = np.where(p >= 0, mag, -mag) + zp_out
    return np.clip(q, INT8_MIN, INT8_MAX).astype(np.int8)


def conv2d_int8(xq, wq, bq, zp_in: int, m0: int, shift: int, zp_out: int, relu: bool):
    n = xq.shape[0]
    cin, cout = wq.shape[2], wq.shape[3]
    x = xq.astype(np.int64) - zp_in
    cols = _im2col(x)
    acc = cols @ wq.reshape(9 * cin, cout).astype(np.int64) + bq.astype(np.int64)
    yq = _requantize(acc, m0, shift, zp_out)
    if relu:
        yq = np.maximum(yq, np.int8(zp_out))
    oh, ow = xq.shape[1] - 2, xq.shape[2] - 2
    macs = n * oh * ow * cout * 9 * cin
    return yq, macs


def dense_int8(xq, wq, bq, zp_in: int, m0: int, shift: int, zp_out: int, relu: bool):
    n, k = xq.shape
    m = wq.shape[1]
    x = xq.astype(np.int64) - zp_in
    acc = x @ wq.astype(np.int64) + bq.astype(np.int64)
    yq = _requantize(acc, m0, shift, zp_out)
    if relu:
        yq = np.maximum(yq, np.int8(zp_out))
    return yq, n * k * m


def maxpool2_int8(xq: np.ndarray) -> np.ndarray:
    return _pool_windows(xq).max(axis=3)
