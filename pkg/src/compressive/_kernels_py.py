"""Pure numpy implementations of the fused kernels.

Every function here has a twin with the same signature in ``_kernels.pyx``.
Arrays are 3-D ``(batch, rows, cols)`` and C-contiguous; callers reshape.
"""

import numpy as np


def _rel_index(n, length, offset):
    # key j for query i sits at relative distance offset + i - j
    i = np.arange(n)[:, None]
    j = np.arange(length)[None, :]
    dist = offset + i - j
    return dist, dist >= 0


def rel_shift(pos, offset, length):
    """Gather ``pos[b, i, offset + i - j]`` into ``out[b, i, j]``; zero where j > offset + i."""
    nb, n, r = pos.shape
    dist, valid = _rel_index(n, length, offset)
    valid = valid & (dist < r)
    idx = np.where(valid, dist, 0)
    out = np.take_along_axis(pos, np.broadcast_to(idx, (nb, n, length)), axis=2)
    out *= valid
    return np.ascontiguousarray(out)


def rel_shift_backward(grad, offset, r):
    nb, n, length = grad.shape
    # inverse map: distance k for query i comes from key j = offset + i - k
    i = np.arange(n)[:, None]
    k = np.arange(r)[None, :]
    j = offset + i - k
    valid = (j >= 0) & (j < length)
    idx = np.where(valid, j, 0)
    out = np.take_along_axis(grad, np.broadcast_to(idx, (nb, n, r)), axis=2)
    out *= valid
    return np.ascontiguousarray(out)


def masked_softmax(scores, offset):
    """Causal softmax over the last axis; row i keeps keys j <= offset + i."""
    nb, n, length = scores.shape
    _, valid = _rel_index(n, length, offset)
    x = np.where(valid, scores, -np.inf)
    x = x - x.max(axis=2, keepdims=True)
    e = np.exp(x)
    e /= e.sum(axis=2, keepdims=True)
    return e


def softmax_backward(y, grad):
    inner = (y * grad).sum(axis=2, keepdims=True)
    return y * (grad - inner)


def layer_norm(x, gain, bias, eps):
    mean = x.mean(axis=2, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=2, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    return xhat * gain + bias, xhat, rstd[..., 0]


def layer_norm_backward(grad, xhat, rstd, gain):
    d = xhat.shape[2]
    dgain = (grad * xhat).sum(axis=(0, 1))
    dbias = grad.sum(axis=(0, 1))
    gx = grad * gain
    dx = (gx - gx.mean(axis=2, keepdims=True)
          - xhat * (gx * xhat).sum(axis=2, keepdims=True) / d)
    dx *= rstd[..., None]
    return dx, dgain, dbias


def max_pool(x, window, stride):
    """Max over time windows; ties resolve to the earliest row."""
    nb, n, d = x.shape
    n_out = (n - window) // stride + 1
    starts = np.arange(n_out) * stride
    idx = starts[:, None] + np.arange(window)[None, :]
    windows = x[:, idx, :]  # (nb, n_out, window, d)
    arg = windows.argmax(axis=2)
    out = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return np.ascontiguousarray(out), (arg + starts[None, :, None]).astype(np.int64)


def max_pool_backward(grad, argmax, n):
    nb, n_out, d = grad.shape
    out = np.zeros((nb, n, d), dtype=grad.dtype)
    b = np.arange(nb)[:, None, None]
    c = np.arange(d)[None, None, :]
    np.add.at(out, (b, argmax, c), grad)
    return out
