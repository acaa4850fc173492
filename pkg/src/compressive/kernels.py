"""Backend selection for the fused kernels.

The compiled extension is used when it imports; set
``COMPRESSIVE_PURE_PYTHON=1`` to force the numpy fallback. Under the
``cython`` backend, kernels where numpy's vectorised exp/reductions measured
faster (see ``benchmarks/bench_kernels.py``) still run in numpy.
"""

import os
from types import SimpleNamespace

from . import _kernels_py

KERNELS = ("rel_shift", "rel_shift_backward", "masked_softmax", "softmax_backward",
           "layer_norm", "layer_norm_backward", "max_pool", "max_pool_backward")
NUMPY_FASTER = frozenset({"masked_softmax", "softmax_backward", "layer_norm"})


def _load_compiled():
    if os.environ.get("COMPRESSIVE_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


def _mixed(compiled):
    return SimpleNamespace(**{name: getattr(_kernels_py if name in NUMPY_FASTER else compiled, name)
                              for name in KERNELS})


_compiled = _load_compiled()
BACKEND = "cython" if _compiled is not None else "numpy"
_active = _mixed(_compiled) if _compiled is not None else _kernels_py


def compiled_available():
    return _compiled is not None


def use_backend(name):
    """Switch the active backend at runtime ('cython' or 'numpy')."""
    global _active, BACKEND
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _active = _mixed(_compiled)
    elif name == "numpy":
        _active = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def backend_module(name):
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    return _kernels_py


def rel_shift(pos, offset, length):
    return _active.rel_shift(pos, offset, length)


def rel_shift_backward(grad, offset, r):
    return _active.rel_shift_backward(grad, offset, r)


def masked_softmax(scores, offset):
    return _active.masked_softmax(scores, offset)


def softmax_backward(y, grad):
    return _active.softmax_backward(y, grad)


def layer_norm(x, gain, bias, eps):
    return _active.layer_norm(x, gain, bias, eps)


def layer_norm_backward(grad, xhat, rstd, gain):
    return _active.layer_norm_backward(grad, xhat, rstd, gain)


def max_pool(x, window, stride):
    return _active.max_pool(x, window, stride)


def max_pool_backward(grad, argmax, n):
    return _active.max_pool_backward(grad, argmax, n)
