"""Central finite differences, kept independent of the gradient tape."""

import numpy as np

from ..errors import ParameterError
from .tensor import Tensor, backward, no_grad


def _scalar(value):
    if isinstance(value, Tensor):
        value = value.data
    return float(np.asarray(value, dtype=np.float64).reshape(-1)[0])


def fd_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``f`` receives a fresh constant :class:`Tensor` per evaluation and runs
    with recording disabled.
    """
    if not h > 0:
        raise ParameterError(f"finite-difference step must be > 0, got {h}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    flat = base.reshape(-1)
    grad = np.empty(flat.size)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = _scalar(f(Tensor(base)))
            flat[i] = orig - h
            minus = _scalar(f(Tensor(base)))
            flat[i] = orig
            grad[i] = (plus - minus) / (2.0 * h)
    return Tensor(grad.reshape(base.shape))


def relative_error(analytic, numeric, floor=1e-8):
    """max |a - n| scaled by the larger of the two max-norms (never below ``floor``)."""
    a = np.asarray(analytic.data if isinstance(analytic, Tensor) else analytic)
    n = np.asarray(numeric.data if isinstance(numeric, Tensor) else numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def analytic_gradient(f, x):
    """Gradient of scalar ``f`` at ``x`` via the tape."""
    leaf = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True)
    backward(f(leaf))
    return Tensor(leaf.grad if leaf.grad is not None else np.zeros(leaf.shape))


def check_gradient(f, x, h=1e-5):
    """Relative error between tape and finite-difference gradients of ``f`` at ``x``."""
    return relative_error(analytic_gradient(f, x), fd_gradient(f, x, h))


def fd_param_gradient(f, params, name, h=1e-5):
    """Finite-difference gradient of ``f()`` w.r.t. the tensor ``params[name]`` (perturbed in place)."""
    target = params[name]
    original = target.data
    base = np.array(original)
    flat = base.reshape(-1)
    grad = np.empty(flat.size)
    try:
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                target.data = base.copy()
                plus = _scalar(f())
                flat[i] = orig - h
                target.data = base.copy()
                minus = _scalar(f())
                flat[i] = orig
                grad[i] = (plus - minus) / (2.0 * h)
    finally:
        target.data = original
    return grad.reshape(base.shape)
