"""Dense float64 tensors with reverse-mode gradients.

A :class:`Tensor` wraps a read-only numpy array. Ops on tensors that require
grad record their parents and a local backward rule; :func:`backward` collects
the reachable ops into a :class:`GradTape` and replays it in reverse
execution order.
"""

from __future__ import annotations

import contextlib
import itertools
import os
import threading

import numpy as np

from ..errors import ContractError, DegenerateInputError, ParameterError, ShapeError
from .kernels import K

_SEQ = itertools.count()
_STATE = threading.local()
DEBUG = os.environ.get("ATAS_DEBUG", "") in ("1", "true", "yes")


def grad_enabled() -> bool:
    return getattr(_STATE, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable op recording on this thread."""
    previous = grad_enabled()
    _STATE.enabled = False
    try:
        yield
    finally:
        _STATE.enabled = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "_op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = next(_SEQ)
        self._op = "leaf"

    @classmethod
    def _result(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        data = np.asarray(data, dtype=np.float64)
        data.flags.writeable = False
        out.data = data
        out.grad = None
        out._seq = next(_SEQ)
        out._op = op
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        if DEBUG and np.isnan(data).any() and not any(np.isnan(p.data).any() for p in parents):
            raise FloatingPointError(f"{op} produced NaN from NaN-free inputs")
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self) -> Tensor:
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        out._seq = next(_SEQ)
        out._op = "detach"
        return out

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("only division by a Python scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class GradTape:
    """Differentiable ops reachable from one output, in reverse execution order."""

    __slots__ = ("nodes",)

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def record(cls, output: Tensor) -> GradTape:
        seen = {id(output)}
        stack = [output]
        nodes = []
        while stack:
            t = stack.pop()
            nodes.append(t)
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        # an op's sequence number is larger than any of its inputs'
        nodes.sort(key=lambda t: t._seq, reverse=True)
        return cls(nodes)

    def replay(self, seed):
        if not self.nodes:
            return
        grads = {id(self.nodes[0]): seed}
        for node in self.nodes:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                g = np.array(g, dtype=np.float64).reshape(node.shape)
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf that requires grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    GradTape.record(loss).replay(np.ones_like(loss.data))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._result(ad * bd, (a, b), bw, "mul")


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return Tensor._result(a.data * s, (a,), lambda g: (g * s,), "scale")


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return Tensor._result(y, (a,), lambda g: (g * y,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    if (x <= 0).any():
        raise ParameterError("log of a non-positive value")
    return Tensor._result(np.log(x), (a,), lambda g: (g / x,), "log")


def gelu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return Tensor._result(K.gelu_fwd(x), (a,), lambda g: (K.gelu_bwd(g, x),), "gelu")


# reductions ------------------------------------------------------------------


def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return Tensor._result(out, (a,), lambda g: (_expand(g, shape, axis, keepdims),), "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(out.size, 1) if a.data.size else 1
    return Tensor._result(out, (a,), lambda g: (_expand(g / count, shape, axis, keepdims),), "mean")


# linear algebra & layout -----------------------------------------------------


def _swap_last(x):
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ _swap_last(bd), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                k, p = bd.shape
                gb = ad.reshape(-1, k).T @ g.reshape(-1, p)
            else:
                gb = _unbroadcast(_swap_last(ad) @ g, bd.shape)
        return ga, gb

    return Tensor._result(ad @ bd, (a, b), bw, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return Tensor._result(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need at least 2 dims, got shape {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {old} to {tuple(shape)}") from None
    return Tensor._result(out, (a,), lambda g: (_unbroadcast(g, old),), "broadcast_to")


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor._result(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def _is_advanced(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(a, index) -> Tensor:
    """Basic or integer-array indexing (``slice`` in the op list)."""
    a = as_tensor(a)
    shape = a.shape
    advanced = _is_advanced(index)

    def bw(g):
        z = np.zeros(shape)
        if advanced:
            np.add.at(z, index, g)
        else:
            z[index] = g
        return (z,)

    return Tensor._result(a.data[index], (a,), bw, "getitem")


def take(a, indices, axis=0) -> Tensor:
    """Gather along ``axis`` with an integer index array of any shape."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    shape = a.shape
    axis = axis % a.ndim
    unique = np.unique(indices).size == indices.size
    lead = (slice(None),) * axis

    def bw(g):
        z = np.zeros(shape)
        if unique:
            z[lead + (indices,)] = g
        else:
            np.add.at(z, lead + (indices,), g)
        return (z,)

    return Tensor._result(np.take(a.data, indices, axis=axis), (a,), bw, "take")


# fused row ops ---------------------------------------------------------------


def _rows(x):
    return np.ascontiguousarray(x).reshape(-1, x.shape[-1])


def softmax(x, temperature: float = 1.0) -> Tensor:
    """Softmax of ``x / temperature`` over the last axis."""
    if not temperature > 0:
        raise ParameterError(f"softmax temperature must be > 0, got {temperature}")
    x = as_tensor(x)
    shape = x.shape
    inv_t = 1.0 / temperature
    y = K.softmax_fwd(_rows(x.data * inv_t) if inv_t != 1.0 else _rows(x.data))

    def bw(g):
        d = K.softmax_bwd(_rows(g), y)
        return ((d * inv_t if inv_t != 1.0 else d).reshape(shape),)

    return Tensor._result(y.reshape(shape), (x,), bw, "softmax")


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    y, p = K.log_softmax_fwd(_rows(x.data))
    return Tensor._result(y.reshape(shape), (x,), lambda g: (K.log_softmax_bwd(_rows(g), p).reshape(shape),), "log_softmax")


def layer_norm(x, weight, bias, eps: float = 1e-5) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    d = x.shape[-1]
    if weight.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: input {x.shape} with weight {weight.shape} and bias {bias.shape}")
    shape = x.shape
    w = weight.data
    y, xhat, rstd = K.layer_norm_fwd(_rows(x.data), np.ascontiguousarray(w), np.ascontiguousarray(bias.data), eps)

    def bw(g):
        dx, dw, db = K.layer_norm_bwd(_rows(g), xhat, rstd, np.ascontiguousarray(w))
        return dx.reshape(shape), dw, db

    return Tensor._result(y.reshape(shape), (x, weight, bias), bw, "layer_norm")


def l2_normalize(x) -> Tensor:
    """Scale each vector along the last axis to unit L2 norm."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if (norm == 0).any():
        raise DegenerateInputError("cannot normalize a zero-norm vector")
    y = x.data / norm

    def bw(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return Tensor._result(y, (x,), bw, "l2_normalize")


def cosine_sim(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape or a.shape[0] < 1:
        raise ShapeError(f"cosine_sim: need equal-length vectors, got {a.shape} and {b.shape}")
    return sum_(mul(l2_normalize(a), l2_normalize(b)))


def pairwise_cosine(a, b) -> Tensor:
    """Cosine similarity between every row of ``a`` (..., m, d) and of ``b`` (..., k, d)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"pairwise_cosine: feature dims differ in {a.shape} and {b.shape}")
    return matmul(l2_normalize(a), transpose(l2_normalize(b)))


def dot(a, b) -> Tensor:
    return sum_(mul(a, b))


def is_finite(t: Tensor) -> bool:
    return bool(np.isfinite(t.data).all())
