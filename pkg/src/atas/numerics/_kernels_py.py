"""Pure numpy row kernels. Reference implementation and import-time fallback.

Every function takes C-contiguous float64 2-D arrays laid out as (rows, cols)
and reduces along the last axis. ``gelu_*`` accept any shape.
"""

import math

import numpy as np

BACKEND = "python"

_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def layer_norm_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gamma + beta
    return y, xhat, rstd[:, 0]


def layer_norm_bwd(gy, xhat, rstd, gamma):
    dgamma = (gy * xhat).sum(axis=0)
    dbeta = gy.sum(axis=0)
    gxhat = gy * gamma
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (gxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def softmax_fwd(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(gy, y):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def log_softmax_fwd(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e.sum(axis=1, keepdims=True)
    return shifted - np.log(s), e / s


def log_softmax_bwd(gy, p):
    return gy - p * gy.sum(axis=1, keepdims=True)


def gelu_fwd(x):
    inner = _GELU_K * (x + _GELU_C * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_bwd(gy, x):
    x2 = x * x
    t = np.tanh(_GELU_K * (x + _GELU_C * x2 * x))
    dinner = _GELU_K * (1.0 + 3.0 * _GELU_C * x2)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)
