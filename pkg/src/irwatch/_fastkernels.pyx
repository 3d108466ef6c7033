# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core.

Loop-for-loop equivalent of `irwatch.kernels_py`. Float kernels accumulate in
the array dtype (float32 or float64); integer kernels are exact, so int8
outputs are bit-identical to the numpy fallback.
"""
import numpy as np

from libc.stdint cimport int8_t, int32_t, int64_t, uint8_t

ctypedef fused real:
    float
    double

cdef int64_t INT32_MIN_ = -(<int64_t>1 << 31)
cdef int64_t INT32_MAX_ = (<int64_t>1 << 31) - 1


cdef inline object _np_dtype(real v):
    if real is float:
        return np.float32
    return np.float64


def conv2d_fwd(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[::1] b):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t cout = w.shape[3]
    cdef Py_ssize_t oh = h - 2, ow = wd - 2
    out = np.empty((n, oh, ow, cout), dtype=_np_dtype(x[0, 0, 0, 0]))
    cdef real[:, :, :, ::1] y = out
    cdef Py_ssize_t s, i, j, o, di, dj, c
    cdef real acc
    with nogil:
        for s in range(n):
            for i in range(oh):
                for j in range(ow):
                    for o in range(cout):
                        acc = b[o]
                        for di in range(3):
                            for dj in range(3):
                                for c in range(cin):
                                    acc = acc + x[s, i + di, j + dj, c] * w[di, dj, c, o]
                        y[s, i, j, o] = acc
    return out


def conv2d_bwd(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[:, :, :, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t oh = dy.shape[1], ow = dy.shape[2], cout = dy.shape[3]
    dtype = _np_dtype(x[0, 0, 0, 0])
    dx_arr = np.zeros((n, h, wd, cin), dtype=dtype)
    dw_arr = np.zeros((3, 3, cin, cout), dtype=dtype)
    db_arr = np.zeros(cout, dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef real[:, :, :, ::1] dw = dw_arr
    cdef real[::1] db = db_arr
    cdef Py_ssize_t s, i, j, o, di, dj, c
    cdef real g
    with nogil:
        for s in range(n):
            for i in range(oh):
                for j in range(ow):
                    for o in range(cout):
                        g = dy[s, i, j, o]
                        db[o] = db[o] + g
                        for di in range(3):
                            for dj in range(3):
                                for c in range(cin):
                                    dw[di, dj, c, o] = dw[di, dj, c, o] + x[s, i + di, j + dj, c] * g
                                    dx[s, i + di, j + dj, c] = dx[s, i + di, j + dj, c] + w[di, dj, c, o] * g
    return dx_arr, dw_arr, db_arr


def dense_fwd(real[:, ::1] x, real[:, ::1] w, real[::1] b):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], m = w.shape[1]
    out = np.empty((n, m), dtype=_np_dtype(x[0, 0]))
    cdef real[:, ::1] y = out
    cdef Py_ssize_t s, i, j
    cdef real acc
    with nogil:
        for s in range(n):
            for j in range(m):
                acc = b[j]
                for i in range(k):
                    acc = acc + x[s, i] * w[i, j]
                y[s, j] = acc
    return out


def dense_bwd(real[:, ::1] x, real[:, ::1] w, real[:, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], m = w.shape[1]
    dtype = _np_dtype(x[0, 0])
    dx_arr = np.zeros((n, k), dtype=dtype)
    dw_arr = np.zeros((k, m), dtype=dtype)
    db_arr = np.zeros(m, dtype=dtype)
    cdef real[:, ::1] dx = dx_arr
    cdef real[:, ::1] dw = dw_arr
    cdef real[::1] db = db_arr
    cdef Py_ssize_t s, i, j
    cdef real g
    with nogil:
        for s in range(n):
            for j in range(m):
                g = dy[s, j]
                db[j] = db[j] + g
                for i in range(k):
                    dw[i, j] = dw[i, j] + x[s, i] * g
                    dx[s, i] = dx[s, i] + w[i, j] * g
    return dx_arr, dw_arr, db_arr


def maxpool2_fwd(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t oh = h // 2, ow = w // 2
    dtype = _np_dtype(x[0, 0, 0, 0])
    out = np.empty((n, oh, ow, c), dtype=dtype)
    idx_arr = np.empty((n, oh, ow, c), dtype=np.uint8)
    cdef real[:, :, :, ::1] y = out
    cdef uint8_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t s, i, j, ch, di, dj
    cdef real best, v
    cdef uint8_t pos
    with nogil:
        for s in range(n):
            for i in range(oh):
                for j in range(ow):
                    for ch in range(c):
                        best = x[s, 2 * i, 2 * j, ch]
                        pos = 0
                        for di in range(2):
                            for dj in range(2):
                                v = x[s, 2 * i + di, 2 * j + dj, ch]
                                if v > best:
                                    best = v
                                    pos = <uint8_t>(2 * di + dj)
                        y[s, i, j, ch] = best
                        idx[s, i, j, ch] = pos
    return out, idx_arr


def maxpool2_bwd(real[:, :, :, ::1] dy, uint8_t[:, :, :, ::1] idx, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = dy.shape[0], oh = dy.shape[1], ow = dy.shape[2], c = dy.shape[3]
    dx_arr = np.zeros((n, h, w, c), dtype=_np_dtype(dy[0, 0, 0, 0]))
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t s, i, j, ch, di, dj
    cdef uint8_t pos
    with nogil:
        for s in range(n):
            for i in range(oh):
                for j in range(ow):
                    for ch in range(c):
                        pos = idx[s, i, j, ch]
                        di = pos >> 1
                        dj = pos & 1
                        dx[s, 2 * i + di, 2 * j + dj, ch] = dy[s, i, j, ch]
    return dx_arr


cdef inline int64_t _requant_one(int64_t acc, int64_t m0, int shift) nogil:
    # fixed-point multiply, round half away from zero, arithmetic shift
    cdef int64_t p = acc * m0
    cdef int64_t half = 0
    cdef int64_t mag
    if shift > 0:
        half = (<int64_t>1) << (shift - 1)
    if p >= 0:
        mag = (p + half) >> shift
        return mag
    mag = ((-p) + half) >> shift
    return -mag


cdef inline int8_t _clamp_i8(int64_t v) nogil:
    if v < -128:
        return -128
    if v > 127:
        return 127
    return <int8_t>v


def conv2d_int8(int8_t[:, :, :, ::1] xq, int8_t[:, :, :, ::1] wq, int32_t[::1] bq,
                int zp_in, int64_t m0, int shift, int zp_out, bint relu):
    cdef Py_ssize_t n = xq.shape[0], h = xq.shape[1], wd = xq.shape[2], cin = xq.shape[3]
    cdef Py_ssize_t cout = wq.shape[3]
    cdef Py_ssize_t oh = h - 2, ow = wd - 2
    out = np.empty((n, oh, ow, cout), dtype=np.int8)
    cdef int8_t[:, :, :, ::1] y = out
    cdef Py_ssize_t s, i, j, o, di, dj, c
    cdef int64_t acc, q
    cdef bint overflow = False
    with nogil:
        for s in range(n):
            for i in range(oh):
                for j in range(ow):
                    for o in range(cout):
                        acc = bq[o]
                        for di in range(3):
                            for dj in range(3):
                                for c in range(cin):
                                    acc = acc + (<int64_t>xq[s, i + di, j + dj, c] - zp_in) * wq[di, dj, c, o]
                        if acc < INT32_MIN_ or acc > INT32_MAX_:
                            overflow = True
                        q = _requant_one(acc, m0, shift) + zp_out
                        if relu and q < zp_out:
                            q = zp_out
                        y[s, i, j, o] = _clamp_i8(q)
    if overflow:
        raise OverflowError("int32 accumulator overflow")
    return out, n * oh * ow * cout * 9 * cin


def dense_int8(int8_t[:, ::1] xq, int8_t[:, ::1] wq, int32_t[::1] bq,
               int zp_in, int64_t m0, int shift, int zp_out, bint relu):
    cdef Py_ssize_t n = xq.shape[0], k = xq.shape[1], m = wq.shape[1]
    out = np.empty((n, m), dtype=np.int8)
    cdef int8_t[:, ::1] y = out
    cdef Py_ssize_t s, i, j
    cdef int64_t acc, q
    cdef bint overflow = False
    with nogil:
        for s in range(n):
            for j in range(m):
                acc = bq[j]
                for i in range(k):
                    acc = acc + (<int64_t>xq[s, i] - zp_in) * wq[i, j]
                if acc < INT32_MIN_ or acc > INT32_MAX_:
                    overflow = True
                q = _requant_one(acc, m0, shift) + zp_out
                if relu and q < zp_out:
                    q = zp_out
                y[s, j] = _clamp_i8(q)
    if overflow:
        raise OverflowError("int32 accumulator overflow")
    return out, n * k * m


def maxpool2_int8(int8_t[:, :, :, ::1] xq):
    cdef Py_ssize_t n = xq.shape[0], h = xq.shape[1], w = xq.shape[2], c = xq.shape[3]
    cdef Py_ssize_t oh = h // 2, ow = w // 2
    out = np.empty((n, oh, ow, c), dtype=np.int8)
    cdef int8_t[:, :, :, ::1] y = out
    cdef Py_ssize_t s, i, j, ch, di, dj
    cdef int8_t best, v
    with nogil:
        for s in range(n):
            for i in range(oh):
                for j in range(ow):
                    for ch in range(c):
                        best = xq[s, 2 * i, 2 * j, ch]
                        for di in range(2):
                            for dj in range(2):
                                v = xq[s, 2 * i + di, 2 * j + dj, ch]
                                if v > best:
                                    best = v
                        y[s, i, j, ch] = best
    return out
