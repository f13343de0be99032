"""Backend selection for the fused row kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback. ``ATAS_PURE_PYTHON=1`` forces the fallback at import time, and
:func:`use_backend` switches at runtime (tests and benchmarks use it).
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _kernels_compiled
except ImportError:  # extension not built
    _kernels_compiled = None

_NAMES = (
    "layer_norm_fwd",
    "layer_norm_bwd",
    "softmax_fwd",
    "softmax_bwd",
    "log_softmax_fwd",
    "log_softmax_bwd",
    "gelu_fwd",
    "gelu_bwd",
)


class _Dispatch:
    __slots__ = ("backend",) + _NAMES

    def load(self, module):
        self.backend = module.BACKEND
        for name in _NAMES:
            setattr(self, name, getattr(module, name))


K = _Dispatch()


def compiled_available():
    return _kernels_compiled is not None


def use_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous backend name."""
    previous = getattr(K, "backend", None)
    if name == "compiled":
        if _kernels_compiled is None:
            raise ImportError("compiled kernels are not built; run `python setup.py build_ext --inplace`")
        K.load(_kernels_compiled)
    elif name == "python":
        K.load(_kernels_py)
    else:
        raise ValueError(f"unknown backend {name!r}")
    return previous


def active_backend():
    return K.backend


if _kernels_compiled is not None and os.environ.get("ATAS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    K.load(_kernels_compiled)
else:
    K.load(_kernels_py)
