"""Tensor arithmetic, reverse-mode gradients, and a finite-difference checker."""

from .gradcheck import analytic_gradient, check_gradient, fd_gradient, fd_param_gradient, relative_error
from .kernels import active_backend, compiled_available, use_backend
from .tensor import (
    GradTape,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    cosine_sim,
    dot,
    exp,
    gelu,
    getitem,
    grad_enabled,
    is_finite,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    pairwise_cosine,
    reshape,
    scale,
    softmax,
    sub,
    sum_,
    take,
    transpose,
)

sum = sum_  # noqa: A001
slice = getitem  # noqa: A001

__all__ = [
    "GradTape", "Tensor", "active_backend", "add", "analytic_gradient", "as_tensor", "backward",
    "broadcast_to", "check_gradient", "compiled_available", "concat", "cosine_sim", "dot", "exp",
    "fd_gradient", "fd_param_gradient", "gelu", "getitem", "grad_enabled", "is_finite", "l2_normalize",
    "layer_norm", "log", "log_softmax", "matmul", "mean", "mul", "no_grad", "pairwise_cosine",
    "relative_error", "reshape", "scale", "slice", "softmax", "sub", "sum", "take", "transpose",
    "use_backend",
]
