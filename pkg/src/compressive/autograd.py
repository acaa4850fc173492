"""Dense numpy tensors with reverse-mode differentiation.

Each op records its parents and a closure mapping the output gradient to
parent gradients. Ops whose inputs do not require gradients record nothing,
so detached computations (evaluation, stopped memories) build no graph.
"""

from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ContractError, DegenerateInputError, DimensionError

_DTYPES = {"single": np.float32, "double": np.float64}
_mode = "single"
_grad_enabled = True


def default_dtype():
    return _DTYPES[_mode]


def get_precision():
    return _mode


def set_precision(mode):
    global _mode
    if mode not in _DTYPES:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {mode!r}")
    _mode = mode


@contextmanager
def precision(mode):
    """Temporarily switch the dtype used for newly created tensors."""
    previous = _mode
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(previous)


def precision_of(dtype):
    """Precision mode name for a float dtype."""
    return "double" if np.dtype(dtype) == np.float64 else "single"


@contextmanager
def no_grad():
    """Run ops without recording a graph (evaluation, sampling)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64) or arr.dtype != default_dtype():
            arr = arr.astype(default_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return stop_gradient(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self):
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

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


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def constant(x, dtype):
    """Non-trainable tensor in ``dtype``, independent of the ambient precision."""
    with precision(precision_of(dtype)):
        return Tensor(x)


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = constant(b, a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = constant(a, b.dtype)
    a, b = as_tensor(a), as_tensor(b)
    if a.dtype != b.dtype:
        raise TypeError(f"mixed precision in one graph: {a.dtype} vs {b.dtype}")
    return a, b


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = _pair(a, b)

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a.data / b.data, b.shape)

    return Tensor._from_op(a.data / b.data, (a, b), backward)


def power(a, exponent):
    a = as_tensor(a)
    p = float(exponent)

    def backward(g):
        return (g * p * a.data ** (p - 1),)

    return Tensor._from_op(a.data ** p, (a,), backward)


def exp(a):
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return Tensor._from_op(out, (a,), backward)


def log(a):
    def backward(g):
        return (g / a.data,)

    return Tensor._from_op(np.log(a.data), (a,), backward)


def sqrt(a):
    out = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / out,)

    return Tensor._from_op(out, (a,), backward)


def tanh(a):
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor._from_op(out, (a,), backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a):
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return Tensor._from_op(out.astype(x.dtype, copy=False), (a,), backward)


def stop_gradient(x):
    """Identity forward; nothing flows back to ``x`` or its ancestors."""
    x = as_tensor(x)
    out = Tensor.__new__(Tensor)
    out.data = x.data
    out.grad = None
    out.name = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    return out


def dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def backward(g):
        return (g * keep,)

    return Tensor._from_op(x.data * keep, (x,), backward)


# -- reductions and shape ----------------------------------------------------

def reduce_sum(a, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def reduce_mean(a, axis=None, keepdims=False):
    out = reduce_sum(a, axis, keepdims)
    count = a.data.size // max(out.data.size, 1)
    return out * (1.0 / count)


def reshape(a, shape):
    def backward(g):
        return (g.reshape(a.shape),)

    return Tensor._from_op(a.data.reshape(shape), (a,), backward)


def transpose(a, axes=None):
    inverse = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return Tensor._from_op(np.transpose(a.data, axes), (a,), backward)


def swapaxes(a, i, j):
    def backward(g):
        return (np.swapaxes(g, i, j),)

    return Tensor._from_op(np.swapaxes(a.data, i, j), (a,), backward)


def _is_basic(key):
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, type(Ellipsis))) or k is None for k in items)


def index(a, key):
    basic = _is_basic(key)

    def backward(g):
        out = np.zeros_like(a.data)
        if basic:
            out[key] += g
        else:
            np.add.at(out, key, g)
        return (out,)

    return Tensor._from_op(a.data[key], (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis),
                           tuple(tensors), backward)


def embedding(weight, ids):
    """Rows of ``weight`` selected by the integer array ``ids``."""
    ids = np.asarray(ids)

    def backward(g):
        out = np.zeros_like(weight.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (out,)

    return Tensor._from_op(weight.data[ids], (weight,), backward)


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(a.data @ b.data, (a, b), backward)


def l2_norm(x, axes=None):
    """Euclidean norm over ``axes`` (all axes when None); gradient is 0 at the origin."""
    x = as_tensor(x)
    sq = (x.data * x.data).sum(axis=axes, keepdims=True)
    norm = np.sqrt(sq)
    safe = np.where(norm > 0, norm, 1.0)

    def backward(g):
        g = np.asarray(g).reshape(norm.shape)
        return (np.where(norm > 0, g * x.data / safe, 0.0).astype(x.dtype),)

    out = norm.reshape(()) if axes is None else np.squeeze(norm, axis=axes)
    return Tensor._from_op(np.asarray(out), (x,), backward)


# -- normalisation -----------------------------------------------------------

def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return Tensor._from_op(out, (x,), backward)


def log_softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward)


def _as3d(arr):
    return np.ascontiguousarray(arr.reshape((-1,) + arr.shape[-2:]))


def masked_softmax(scores, offset):
    """Softmax over the key axis where query row i may see keys ``j <= offset + i``.

    Masked entries come out exactly 0.
    """
    shape = scores.shape
    out = kernels.masked_softmax(_as3d(scores.data), offset)

    def backward(g):
        return (kernels.softmax_backward(out, _as3d(g)).reshape(shape),)

    return Tensor._from_op(out.reshape(shape), (scores,), backward)


def rel_shift(pos, offset, length):
    """Re-index position scores from relative distance to key slot.

    ``pos[..., i, k]`` scores query i against distance k; the result holds
    ``pos[..., i, offset + i - j]`` at key j and 0 for future keys.
    """
    shape = pos.shape
    r = shape[-1]
    out = kernels.rel_shift(_as3d(pos.data), offset, length)

    def backward(g):
        return (kernels.rel_shift_backward(_as3d(g), offset, r).reshape(shape),)

    return Tensor._from_op(out.reshape(shape[:-1] + (length,)), (pos,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    x, gain = _pair(x, gain)
    shape = x.shape
    if shape[-1] < 1:
        raise DegenerateInputError("layer_norm needs at least one feature")
    y, xhat, rstd = kernels.layer_norm(_as3d(x.data), gain.data, bias.data, eps)

    def backward(g):
        dx, dgain, dbias = kernels.layer_norm_backward(_as3d(g), xhat, rstd, gain.data)
        return dx.reshape(shape), dgain, dbias

    return Tensor._from_op(y.reshape(shape), (x, gain, bias), backward)


# -- temporal convolution and pooling ----------------------------------------

def conv1d(x, kernel, stride=1, dilation=1):
    """Valid temporal convolution over axis -2.

    ``x`` is ``(..., n, d)`` and ``kernel`` is ``(w, d, d_out)``.
    """
    x, kernel = _pair(x, kernel)
    w, d_in, d_out = kernel.shape
    n = x.shape[-2]
    if x.shape[-1] != d_in:
        raise DimensionError(f"conv1d input width {x.shape[-1]} != kernel input {d_in}")
    extent = (w - 1) * dilation + 1
    if n < extent:
        raise DegenerateInputError(f"conv1d needs at least {extent} rows, got {n}")
    n_out = (n - extent) // stride + 1
    span = (n_out - 1) * stride + 1
    taps = [x.data[..., t * dilation: t * dilation + span: stride, :] for t in range(w)]
    out = sum(tap @ kernel.data[t] for t, tap in enumerate(taps))

    def backward(g):
        gx = np.zeros_like(x.data)
        gk = np.empty_like(kernel.data)
        for t in range(w):
            gx[..., t * dilation: t * dilation + span: stride, :] += g @ kernel.data[t].T
            gk[t] = (np.swapaxes(taps[t], -1, -2) @ g).reshape(-1, d_in, d_out).sum(axis=0)
        return gx, gk

    return Tensor._from_op(np.asarray(out, dtype=x.dtype), (x, kernel), backward)


def pool1d(x, kind, window, stride):
    """Max or mean pooling over axis -2; max routes gradient to the first maximum."""
    x = as_tensor(x)
    shape = x.shape
    n = shape[-2]
    if n < window:
        raise DegenerateInputError(f"pool1d window {window} exceeds length {n}")
    flat = _as3d(x.data)
    if kind == "max":
        out, arg = kernels.max_pool(flat, window, stride)

        def backward(g):
            return (kernels.max_pool_backward(_as3d(g), arg, n).reshape(shape),)
    elif kind == "mean":
        n_out = (n - window) // stride + 1
        span = (n_out - 1) * stride + 1
        out = sum(flat[:, t: t + span: stride] for t in range(window)) / window

        def backward(g):
            g = _as3d(g) / window
            gx = np.zeros_like(flat)
            for t in range(window):
                gx[:, t: t + span: stride] += g
            return (gx.reshape(shape),)
    else:
        raise ValueError(f"pool kind must be 'max' or 'mean', got {kind!r}")
    out = np.asarray(out, dtype=x.dtype)
    return Tensor._from_op(out.reshape(shape[:-2] + out.shape[-2:]), (x,), backward)


# -- losses ------------------------------------------------------------------

def token_nll(logits, targets, ignore_index=-1):
    """Per-position negative log-likelihood in nats; ignored positions give 0."""
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(f"logits {logits.shape} vs targets {targets.shape}")
    keep = targets != ignore_index
    safe = np.where(keep, targets, 0)
    z = logits.data
    shifted = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    out = np.where(keep, -picked, 0.0).astype(z.dtype)

    def backward(g):
        probs = np.exp(logp)
        np.put_along_axis(probs, safe[..., None],
                          np.take_along_axis(probs, safe[..., None], axis=-1) - 1.0, axis=-1)
        return (probs * (g * keep)[..., None],)

    return Tensor._from_op(out, (logits,), backward)


# -- backward ----------------------------------------------------------------

def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every requires-grad leaf.

    Gradients add onto whatever is already stored; callers reset explicitly.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            g = np.asarray(g, dtype=node.dtype).reshape(node.shape)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
