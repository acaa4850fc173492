"""Time the compiled and numpy kernel backends side by side.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints per-kernel median wall time for both backends and their ratio, then
the same for one full training step of a small model.
"""

import argparse
import statistics
import time

import numpy as np

from compressive import kernels
from compressive.model import CompressiveTransformer, ModelConfig
from compressive.training import TrainSchedule, Trainer


def _median_seconds(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def kernel_cases(rng):
    batch_heads, n, length, d = 32, 128, 384, 256
    pos = rng.normal(size=(batch_heads, n, length + 1)).astype(np.float32)
    scores = rng.normal(size=(batch_heads, n, length)).astype(np.float32)
    grad = rng.normal(size=(batch_heads, n, length)).astype(np.float32)
    x = rng.normal(size=(8, n, d)).astype(np.float32)
    gain, bias = np.ones(d, np.float32), np.zeros(d, np.float32)
    offset = length - n

    def softmax_bwd(mod):
        y = mod.masked_softmax(scores, offset)
        return lambda: mod.softmax_backward(y, grad)

    def ln_bwd(mod):
        _, xhat, rstd = mod.layer_norm(x, gain, bias, 1e-5)
        return lambda: mod.layer_norm_backward(x, xhat, rstd, gain)

    def pool_bwd(mod):
        out, argmax = mod.max_pool(x, 3, 3)
        return lambda: mod.max_pool_backward(out, argmax, n)

    return {
        "rel_shift": lambda mod: lambda: mod.rel_shift(pos, offset, length),
        "rel_shift_backward": lambda mod: lambda: mod.rel_shift_backward(grad, offset, length + 1),
        "masked_softmax": lambda mod: lambda: mod.masked_softmax(scores, offset),
        "softmax_backward": softmax_bwd,
        "layer_norm": lambda mod: lambda: mod.layer_norm(x, gain, bias, 1e-5),
        "layer_norm_backward": ln_bwd,
        "max_pool": lambda mod: lambda: mod.max_pool(x, 3, 3),
        "max_pool_backward": pool_bwd,
    }


def train_step_timer(backend):
    kernels.use_backend(backend)
    cfg = ModelConfig(n_layers=2, d_model=64, n_heads=4, n_s=32, n_m=32, n_cm=32, vocab_size=256)
    trainer = Trainer(CompressiveTransformer(cfg, seed=0), TrainSchedule(), batch_size=8)
    ids = np.random.default_rng(0).integers(0, 256, size=(8, 33))
    window = (ids[:, :-1], ids[:, 1:])
    return lambda: trainer.train_step([window])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    backends = ["numpy"] + (["cython"] if kernels.compiled_available() else [])
    if len(backends) == 1:
        print("compiled kernels unavailable; timing numpy only")

    rows = []
    for name, make in kernel_cases(np.random.default_rng(0)).items():
        rows.append((name, {b: _median_seconds(make(kernels.backend_module(b)), args.repeat)
                            for b in backends}))
    active = kernels.BACKEND
    try:
        rows.append(("train_step", {b: _median_seconds(train_step_timer(b), args.repeat)
                                    for b in backends}))
    finally:
        kernels.use_backend(active)

    print(f"{'kernel':<22}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}")
    for name, times in rows:
        line = f"{name:<22}" + "".join(f"{times[b] * 1e3:>12.3f}" for b in backends)
        if "cython" in times:
            line += f"{times['numpy'] / times['cython']:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
