import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compressive import kernels

pytestmark = pytest.mark.skipif(not kernels.compiled_available(),
                                reason="compiled kernels not built")

FAST = kernels.backend_module("cython") if kernels.compiled_available() else None
SLOW = kernels.backend_module("numpy")


def _close(a, b, dtype):
    tol = 1e-5 if dtype == np.float32 else 1e-12
    np.testing.assert_allclose(np.asarray(a), np.asarray(b), rtol=tol, atol=tol)


dtypes = st.sampled_from([np.float32, np.float64])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(0, 7), dtypes, st.integers(0, 999))
def test_rel_shift_backends_agree(b, n, offset, dtype, seed):
    rng = np.random.default_rng(seed)
    length = n + offset
    pos = rng.normal(size=(b, n, length)).astype(dtype)
    fwd = FAST.rel_shift(pos, offset, length)
    _close(fwd, SLOW.rel_shift(pos, offset, length), dtype)
    g = rng.normal(size=fwd.shape).astype(dtype)
    _close(FAST.rel_shift_backward(g, offset, length), SLOW.rel_shift_backward(g, offset, length), dtype)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(0, 7), dtypes, st.integers(0, 999))
def test_softmax_backends_agree(b, n, offset, dtype, seed):
    rng = np.random.default_rng(seed)
    scores = (3 * rng.normal(size=(b, n, n + offset))).astype(dtype)
    y = FAST.masked_softmax(scores, offset)
    _close(y, SLOW.masked_softmax(scores, offset), dtype)
    g = rng.normal(size=y.shape).astype(dtype)
    y = np.asarray(y)
    _close(FAST.softmax_backward(y, g), SLOW.softmax_backward(y, g), dtype)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(2, 9), dtypes, st.integers(0, 999))
def test_layer_norm_backends_agree(b, n, d, dtype, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(b, n, d)).astype(dtype)
    gain, bias = rng.normal(size=d).astype(dtype), rng.normal(size=d).astype(dtype)
    fast, slow = FAST.layer_norm(x, gain, bias, 1e-5), SLOW.layer_norm(x, gain, bias, 1e-5)
    for a, s in zip(fast, slow):
        _close(a, s, dtype)
    g = rng.normal(size=x.shape).astype(dtype)
    xhat, rstd = np.asarray(slow[1]), np.asarray(slow[2])
    for a, s in zip(FAST.layer_norm_backward(g, xhat, rstd, gain),
                    SLOW.layer_norm_backward(g, xhat, rstd, gain)):
        _close(a, s, dtype)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), dtypes,
       st.integers(0, 999))
def test_max_pool_backends_agree(b, window, k, d, dtype, seed):
    rng = np.random.default_rng(seed)
    n = window * k
    x = rng.normal(size=(b, n, d)).astype(dtype)
    out_f, arg_f = FAST.max_pool(x, window, window)
    out_s, arg_s = SLOW.max_pool(x, window, window)
    _close(out_f, out_s, dtype)
    np.testing.assert_array_equal(np.asarray(arg_f), np.asarray(arg_s))
    g = rng.normal(size=np.asarray(out_s).shape).astype(dtype)
    arg = np.ascontiguousarray(arg_s, dtype=np.int64)
    _close(FAST.max_pool_backward(g, arg, n), SLOW.max_pool_backward(g, arg, n), dtype)


def test_use_backend_switches_and_restores():
    before = kernels.BACKEND
    try:
        kernels.use_backend("numpy")
        assert kernels.BACKEND == "numpy"
        kernels.use_backend("cython")
        assert kernels.BACKEND == "cython"
        with pytest.raises(ValueError):
            kernels.use_backend("fortran")
    finally:
        kernels.use_backend(before)


def test_model_step_identical_under_both_backends():
    from compressive import autograd as ag
    from compressive.model import CompressiveTransformer, ModelConfig

    cfg = ModelConfig(n_layers=2, d_model=8, n_heads=2, n_s=4, n_m=4, n_cm=2, vocab_size=11)
    x = np.random.default_rng(0).integers(0, 11, (2, 4))
    results = []
    before = kernels.BACKEND
    try:
        for name in ("numpy", "cython"):
            kernels.use_backend(name)
            with ag.precision("double"):
                model = CompressiveTransformer(cfg, seed=3)
                state = model.init_state(2)
                out = model.forward(x, state, targets=x)
                out = model.forward(x, out.state, targets=x)
                ag.backward(out.loss)
                results.append((out.loss.item(), model.embedding.grad.copy()))
    finally:
        kernels.use_backend(before)
    assert results[0][0] == pytest.approx(results[1][0], rel=1e-12)
    np.testing.assert_allclose(results[0][1], results[1][1], rtol=1e-10, atol=1e-12)
