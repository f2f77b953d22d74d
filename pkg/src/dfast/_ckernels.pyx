# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused kernels; same contract as ``dfast._pykernels``.

Accumulations run in double precision regardless of the storage dtype.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, sqrt

cnp.import_array()

cdef double GELU_C = 0.7978845608028654
cdef double GELU_K = 0.044715


def layer_norm_fwd(floating[:, ::1] x, floating[::1] gamma, floating[::1] beta, double eps):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((rows, n), dtype=dtype)
    xhat_arr = np.empty((rows, n), dtype=dtype)
    rstd_arr = np.empty(rows, dtype=dtype)
    cdef floating[:, ::1] y = y_arr
    cdef floating[:, ::1] xhat = xhat_arr
    cdef floating[::1] rstd = rstd_arr
    cdef double mean, var, d, r
    with nogil:
        for i in range(rows):
            mean = 0.0
            for j in range(n):
                mean += x[i, j]
            mean /= n
            var = 0.0
            for j in range(n):
                d = x[i, j] - mean
                var += d * d
            var /= n
            r = 1.0 / sqrt(var + eps)
            rstd[i] = <floating>r
            for j in range(n):
                d = (x[i, j] - mean) * r
                xhat[i, j] = <floating>d
                y[i, j] = <floating>(d * gamma[j] + beta[j])
    return y_arr, xhat_arr, rstd_arr


def layer_norm_bwd(floating[:, ::1] gy, floating[:, ::1] xhat, floating[::1] rstd, floating[::1] gamma):
    cdef Py_ssize_t rows = gy.shape[0], n = gy.shape[1], i, j
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.empty((rows, n), dtype=dtype)
    ggamma_acc = np.zeros(n, dtype=np.float64)
    gbeta_acc = np.zeros(n, dtype=np.float64)
    cdef floating[:, ::1] gx = gx_arr
    cdef double[::1] gg = ggamma_acc
    cdef double[::1] gb = gbeta_acc
    cdef double s1, s2, g
    with nogil:
        for i in range(rows):
            s1 = 0.0
            s2 = 0.0
            for j in range(n):
                g = gy[i, j] * gamma[j]
                s1 += g
                s2 += g * xhat[i, j]
                gg[j] += gy[i, j] * xhat[i, j]
                gb[j] += gy[i, j]
            s1 /= n
            s2 /= n
            for j in range(n):
                g = gy[i, j] * gamma[j]
                gx[i, j] = <floating>((g - s1 - xhat[i, j] * s2) * rstd[i])
    return gx_arr, ggamma_acc.astype(dtype), gbeta_acc.astype(dtype)


def gelu_fwd(x_in):
    x_arr = np.ascontiguousarray(x_in)
    out = np.empty_like(x_arr)
    _gelu_fwd_1d(x_arr.reshape(-1), out.reshape(-1))
    return out


def gelu_bwd(x_in, gy_in):
    x_arr = np.ascontiguousarray(x_in)
    gy_arr = np.ascontiguousarray(gy_in, dtype=x_arr.dtype)
    out = np.empty_like(x_arr)
    _gelu_bwd_1d(x_arr.reshape(-1), gy_arr.reshape(-1), out.reshape(-1))
    return out


cdef inline double _tanh(double u) noexcept nogil:
    # exp form vectorizes under libmvec where tanh does not; clamp keeps exp finite
    if u > 20.0:
        u = 20.0
    elif u < -20.0:
        u = -20.0
    return 1.0 - 2.0 / (exp(2.0 * u) + 1.0)


def _gelu_fwd_1d(floating[::1] x, floating[::1] y):
    with nogil:
        _gelu_fwd_loop(x, y)


def _gelu_bwd_1d(floating[::1] x, floating[::1] gy, floating[::1] gx):
    with nogil:
        _gelu_bwd_loop(x, gy, gx)


cdef void _gelu_fwd_loop(floating[::1] x, floating[::1] y) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v
    for i in range(x.shape[0]):
        v = x[i]
        y[i] = <floating>(0.5 * v * (1.0 + _tanh(GELU_C * (v + GELU_K * v * v * v))))


cdef void _gelu_bwd_loop(floating[::1] x, floating[::1] gy, floating[::1] gx) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v, t, v2
    for i in range(x.shape[0]):
        v = x[i]
        v2 = v * v
        t = _tanh(GELU_C * (v + GELU_K * v2 * v))
        gx[i] = <floating>(gy[i] * (0.5 * (1.0 + t)
                                    + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v2)))


def softmax_fwd(floating[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((rows, n), dtype=dtype)
    cdef floating[:, ::1] y = y_arr
    cdef double m, s, e
    with nogil:
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, n):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(n):
                e = exp(x[i, j] - m)
                y[i, j] = <floating>e
                s += e
            s = 1.0 / s
            for j in range(n):
                y[i, j] = <floating>(y[i, j] * s)
    return y_arr


def softmax_bwd(floating[:, ::1] y, floating[:, ::1] gy):
    cdef Py_ssize_t rows = y.shape[0], n = y.shape[1], i, j
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.empty((rows, n), dtype=dtype)
    cdef floating[:, ::1] gx = gx_arr
    cdef double dot
    with nogil:
        for i in range(rows):
            dot = 0.0
            for j in range(n):
                dot += gy[i, j] * y[i, j]
            for j in range(n):
                gx[i, j] = <floating>(y[i, j] * (gy[i, j] - dot))
    return gx_arr
