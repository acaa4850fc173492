# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the kernels in ``_kernels_py``.

Each kernel walks the (batch, row) grid once and fuses what the numpy
version spreads over several temporaries.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expf, sqrt, INFINITY

cnp.import_array()

ctypedef fused real:
    float
    double


def rel_shift(real[:, :, ::1] pos, Py_ssize_t offset, Py_ssize_t length):
    cdef Py_ssize_t nb = pos.shape[0], n = pos.shape[1], r = pos.shape[2]
    cdef Py_ssize_t b, i, j, k
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((nb, n, length), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    with nogil:
        for b in range(nb):
            for i in range(n):
                for j in range(length):
                    k = offset + i - j
                    if k < 0:
                        break
                    if k < r:
                        out[b, i, j] = pos[b, i, k]
    return out_arr


def rel_shift_backward(real[:, :, ::1] grad, Py_ssize_t offset, Py_ssize_t r):
    cdef Py_ssize_t nb = grad.shape[0], n = grad.shape[1], length = grad.shape[2]
    cdef Py_ssize_t b, i, j, k
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((nb, n, r), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    with nogil:
        for b in range(nb):
            for i in range(n):
                for k in range(r):
                    j = offset + i - k
                    if j < 0:
                        break
                    if j < length:
                        out[b, i, k] = grad[b, i, j]
    return out_arr


def masked_softmax(real[:, :, ::1] scores, Py_ssize_t offset):
    cdef Py_ssize_t nb = scores.shape[0], n = scores.shape[1], length = scores.shape[2]
    cdef Py_ssize_t b, i, j, stop
    cdef double mx, total
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((nb, n, length), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    with nogil:
        for b in range(nb):
            for i in range(n):
                stop = offset + i + 1
                if stop > length:
                    stop = length
                mx = -INFINITY
                for j in range(stop):
                    if scores[b, i, j] > mx:
                        mx = scores[b, i, j]
                total = 0.0
                for j in range(stop):
                    if real is float:
                        out[b, i, j] = expf(<float>(scores[b, i, j] - mx))
                    else:
                        out[b, i, j] = exp(scores[b, i, j] - mx)
                    total += out[b, i, j]
                for j in range(stop):
                    out[b, i, j] = <real>(out[b, i, j] / total)
    return out_arr


def softmax_backward(real[:, :, ::1] y, real[:, :, ::1] grad):
    cdef Py_ssize_t nb = y.shape[0], n = y.shape[1], length = y.shape[2]
    cdef Py_ssize_t b, i, j
    cdef double inner
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((nb, n, length), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    with nogil:
        for b in range(nb):
            for i in range(n):
                inner = 0.0
                for j in range(length):
                    inner += y[b, i, j] * grad[b, i, j]
                for j in range(length):
                    out[b, i, j] = <real>(y[b, i, j] * (grad[b, i, j] - inner))
    return out_arr


def layer_norm(real[:, :, ::1] x, real[::1] gain, real[::1] bias, double eps):
    cdef Py_ssize_t nb = x.shape[0], n = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t b, i, k
    cdef double mean, var, rs, c
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((nb, n, d), dtype=dtype)
    xhat_arr = np.empty((nb, n, d), dtype=dtype)
    rstd_arr = np.empty((nb, n), dtype=dtype)
    cdef real[:, :, ::1] y = y_arr
    cdef real[:, :, ::1] xhat = xhat_arr
    cdef real[:, ::1] rstd = rstd_arr
    with nogil:
        for b in range(nb):
            for i in range(n):
                mean = 0.0
                for k in range(d):
                    mean += x[b, i, k]
                mean /= d
                var = 0.0
                for k in range(d):
                    c = x[b, i, k] - mean
                    var += c * c
                var /= d
                rs = 1.0 / sqrt(var + eps)
                rstd[b, i] = <real>rs
                for k in range(d):
                    c = (x[b, i, k] - mean) * rs
                    xhat[b, i, k] = <real>c
                    y[b, i, k] = <real>(c * gain[k] + bias[k])
    return y_arr, xhat_arr, rstd_arr


def layer_norm_backward(real[:, :, ::1] grad, real[:, :, ::1] xhat,
                        real[:, ::1] rstd, real[::1] gain):
    cdef Py_ssize_t nb = grad.shape[0], n = grad.shape[1], d = grad.shape[2]
    cdef Py_ssize_t b, i, k
    cdef double s1, s2, gx
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty((nb, n, d), dtype=dtype)
    dgain_acc = np.zeros(d, dtype=np.float64)
    dbias_acc = np.zeros(d, dtype=np.float64)
    cdef real[:, :, ::1] dx = dx_arr
    cdef double[::1] dgain = dgain_acc
    cdef double[::1] dbias = dbias_acc
    with nogil:
        for b in range(nb):
            for i in range(n):
                s1 = 0.0
                s2 = 0.0
                for k in range(d):
                    gx = grad[b, i, k] * gain[k]
                    s1 += gx
                    s2 += gx * xhat[b, i, k]
                    dgain[k] += grad[b, i, k] * xhat[b, i, k]
                    dbias[k] += grad[b, i, k]
                s1 /= d
                s2 /= d
                for k in range(d):
                    gx = grad[b, i, k] * gain[k]
                    dx[b, i, k] = <real>((gx - s1 - xhat[b, i, k] * s2) * rstd[b, i])
    return dx_arr, dgain_acc.astype(dtype), dbias_acc.astype(dtype)


def max_pool(real[:, :, ::1] x, Py_ssize_t window, Py_ssize_t stride):
    cdef Py_ssize_t nb = x.shape[0], n = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t n_out = (n - window) // stride + 1
    cdef Py_ssize_t b, o, w, k, best, row
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((nb, n_out, d), dtype=dtype)
    arg_arr = np.empty((nb, n_out, d), dtype=np.int64)
    cdef real[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, ::1] arg = arg_arr
    with nogil:
        for b in range(nb):
            for o in range(n_out):
                for k in range(d):
                    best = o * stride
                    for w in range(1, window):
                        row = o * stride + w
                        if x[b, row, k] > x[b, best, k]:
                            best = row
                    out[b, o, k] = x[b, best, k]
                    arg[b, o, k] = best
    return out_arr, arg_arr


def max_pool_backward(real[:, :, ::1] grad, cnp.int64_t[:, :, ::1] argmax, Py_ssize_t n):
    cdef Py_ssize_t nb = grad.shape[0], n_out = grad.shape[1], d = grad.shape[2]
    cdef Py_ssize_t b, o, k
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((nb, n, d), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    with nogil:
        for b in range(nb):
            for o in range(n_out):
                for k in range(d):
                    out[b, argmax[b, o, k], k] += grad[b, o, k]
    return out_arr
