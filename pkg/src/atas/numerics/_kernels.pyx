# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fused row kernels. Same contracts as ``_kernels_py``; one pass per row, no temporaries."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

BACKEND = "compiled"

cdef double _GELU_K = 0.7978845608028654  # sqrt(2 / pi)
cdef double _GELU_C = 0.044715


def layer_norm_fwd(const double[:, ::1] x, const double[::1] gamma, const double[::1] beta, double eps):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1], i, j
    y_arr = np.empty((rows, cols), dtype=np.float64)
    xhat_arr = np.empty((rows, cols), dtype=np.float64)
    rstd_arr = np.empty(rows, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    cdef double mu, var, r, v
    with nogil:
        for i in range(rows):
            mu = 0.0
            for j in range(cols):
                mu += x[i, j]
            mu /= cols
            var = 0.0
            for j in range(cols):
                v = x[i, j] - mu
                var += v * v
            var /= cols
            r = 1.0 / sqrt(var + eps)
            rstd[i] = r
            for j in range(cols):
                v = (x[i, j] - mu) * r
                xhat[i, j] = v
                y[i, j] = v * gamma[j] + beta[j]
    return y_arr, xhat_arr, rstd_arr


def layer_norm_bwd(const double[:, ::1] gy, const double[:, ::1] xhat, const double[::1] rstd, const double[::1] gamma):
    cdef Py_ssize_t rows = gy.shape[0], cols = gy.shape[1], i, j
    dx_arr = np.empty((rows, cols), dtype=np.float64)
    dgamma_arr = np.zeros(cols, dtype=np.float64)
    dbeta_arr = np.zeros(cols, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double m1, m2, g
    with nogil:
        for i in range(rows):
            m1 = 0.0
            m2 = 0.0
            for j in range(cols):
                g = gy[i, j] * gamma[j]
                m1 += g
                m2 += g * xhat[i, j]
                dgamma[j] += gy[i, j] * xhat[i, j]
                dbeta[j] += gy[i, j]
            m1 /= cols
            m2 /= cols
            for j in range(cols):
                dx[i, j] = rstd[i] * (gy[i, j] * gamma[j] - m1 - xhat[i, j] * m2)
    return dx_arr, dgamma_arr, dbeta_arr


def softmax_fwd(const double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1], i, j
    y_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double m, s, e
    with nogil:
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, cols):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(cols):
                e = exp(x[i, j] - m)
                y[i, j] = e
                s += e
            for j in range(cols):
                y[i, j] /= s
    return y_arr


def softmax_bwd(const double[:, ::1] gy, const double[:, ::1] y):
    cdef Py_ssize_t rows = gy.shape[0], cols = gy.shape[1], i, j
    dx_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double dot
    with nogil:
        for i in range(rows):
            dot = 0.0
            for j in range(cols):
                dot += gy[i, j] * y[i, j]
            for j in range(cols):
                dx[i, j] = y[i, j] * (gy[i, j] - dot)
    return dx_arr


def log_softmax_fwd(const double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1], i, j
    y_arr = np.empty((rows, cols), dtype=np.float64)
    p_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] p = p_arr
    cdef double m, s, e, ls
    with nogil:
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, cols):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(cols):
                e = exp(x[i, j] - m)
                p[i, j] = e
                s += e
            ls = log(s)
            for j in range(cols):
                y[i, j] = (x[i, j] - m) - ls
                p[i, j] /= s
    return y_arr, p_arr


def log_softmax_bwd(const double[:, ::1] gy, const double[:, ::1] p):
    cdef Py_ssize_t rows = gy.shape[0], cols = gy.shape[1], i, j
    dx_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double s
    with nogil:
        for i in range(rows):
            s = 0.0
            for j in range(cols):
                s += gy[i, j]
            for j in range(cols):
                dx[i, j] = gy[i, j] - p[i, j] * s
    return dx_arr


def gelu_fwd(x_in):
    x_arr = np.ascontiguousarray(x_in, dtype=np.float64)
    y_arr = np.empty_like(x_arr)
    cdef const double[::1] x = x_arr.reshape(-1)
    cdef double[::1] y = y_arr.reshape(-1)
    cdef Py_ssize_t n = x.shape[0], i
    cdef double v
    with nogil:
        for i in range(n):
            # 0.5 * (1 + tanh(u)) == 1 / (1 + exp(-2u)); libm exp is much cheaper than tanh
            v = x[i]
            y[i] = v / (1.0 + exp(-2.0 * _GELU_K * (v + _GELU_C * v * v * v)))
    return y_arr


def gelu_bwd(gy_in, x_in):
    x_arr = np.ascontiguousarray(x_in, dtype=np.float64)
    gy_arr = np.ascontiguousarray(gy_in, dtype=np.float64)
    dx_arr = np.empty_like(x_arr)
    cdef const double[::1] x = x_arr.reshape(-1)
    cdef const double[::1] gy = gy_arr.reshape(-1)
    cdef double[::1] dx = dx_arr.reshape(-1)
    cdef Py_ssize_t n = x.shape[0], i
    cdef double v, v2, s
    with nogil:
        for i in range(n):
            v = x[i]
            v2 = v * v
            s = 1.0 / (1.0 + exp(-2.0 * _GELU_K * (v + _GELU_C * v2 * v)))
            # 1 - tanh(u)^2 == 4 s (1 - s)
            dx[i] = gy[i] * (s + 2.0 * v * s * (1.0 - s) * _GELU_K * (1.0 + 3.0 * _GELU_C * v2))
    return dx_arr
