"""Optimisation: Adam, warmup + cosine schedule, global-norm clipping,
reduced update frequency late in training, and the training loop.

Transformer and compression parameters live in separate optimizer streams.
The task loss drives the first, the auxiliary compression loss the second;
the two losses are never summed.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .errors import TrainingFault

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSchedule:
    lr_min: float = 1e-6
    lr_max: float = 3e-4
    warmup_steps: int = 500
    decay_steps: int = 20_000
    clip_norm: float = 0.1
    update_every_initial: int = 1
    update_every_late: int = 4
    switch_step: int = 5_000
    unroll_windows: int = 1

    def __post_init__(self):
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")
        if self.warmup_steps < 0 or self.decay_steps < 0:
            raise ValueError("warmup and decay steps must be >= 0")
        if self.update_every_initial < 1 or self.update_every_late < 1:
            raise ValueError("update frequencies must be >= 1")
        if self.unroll_windows < 1:
            raise ValueError("unroll_windows must be >= 1")

    @classmethod
    def char_lm(cls, **overrides):
        """Character-level preset: 4k warmup, 100k cosine decay, every 4 steps after 60k."""
        return replace(cls(warmup_steps=4_000, decay_steps=100_000, switch_step=60_000), **overrides)

    @classmethod
    def word_lm(cls, **overrides):
        return replace(cls(warmup_steps=16_000, decay_steps=500_000, switch_step=60_000), **overrides)


def lr_at(step, sched):
    if step < 0:
        raise ValueError("step must be >= 0")
    if step < sched.warmup_steps:
        return sched.lr_min + (sched.lr_max - sched.lr_min) * step / sched.warmup_steps
    t = step - sched.warmup_steps
    if t >= sched.decay_steps:
        return sched.lr_min
    return sched.lr_min + 0.5 * (sched.lr_max - sched.lr_min) * (1.0 + math.cos(math.pi * t / sched.decay_steps))


def should_apply(step, sched):
    """Whether the optimizer applies accumulated gradients after ``step``."""
    if step < sched.switch_step:
        return step % sched.update_every_initial == 0
    return (step - sched.switch_step) % sched.update_every_late == 0


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_global_norm(grads, max_norm=0.1, step=None):
    """Scale ``grads`` jointly so their global L2 norm is at most ``max_norm``.

    Returns ``(clipped, pre_clip_norm)``.
    """
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise TrainingFault("non-finite gradient", step)
    if norm <= max_norm:
        return list(grads), norm
    scale = max_norm / norm
    return [g * g.dtype.type(scale) for g in grads], norm


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)

    def state_arrays(self, prefix):
        out = {}
        for name in self.params:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, prefix, arrays, t):
        self.t = int(t)
        for name in self.params:
            self.m[name] = np.asarray(arrays[f"{prefix}.m.{name}"], dtype=self.params[name].dtype)
            self.v[name] = np.asarray(arrays[f"{prefix}.v.{name}"], dtype=self.params[name].dtype)


def adam_apply(params, grads, opt, lr):
    """One Adam step of ``opt`` over ``params`` with explicit ``grads``."""
    opt.step({k: np.asarray(grads[k]) for k in params}, lr)
    return params


class OptimizerStream:
    """One parameter group: pending gradients live in ``param.grad`` until applied."""

    def __init__(self, name, params, **adam_kwargs):
        self.name = name
        self.params = dict(params)
        self.adam = Adam(self.params, **adam_kwargs)
        self.pending = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
        self.pending = 0

    def apply(self, lr, clip_norm, step=None):
        """Average pending gradients over the accumulated micro-steps, clip, step Adam."""
        if not self.params:
            self.pending = 0
            return 0.0
        names = list(self.params)
        count = max(self.pending, 1)
        grads = [np.zeros_like(self.params[k].data) if self.params[k].grad is None
                 else self.params[k].grad / count for k in names]
        clipped, norm = clip_global_norm(grads, clip_norm, step)
        self.adam.step(dict(zip(names, clipped)), lr)
        self.zero_grad()
        return norm


@dataclass
class StepMetrics:
    step: int
    lr: float
    task_loss: float
    aux_loss: float
    grad_norm: float = float("nan")
    tokens_per_sec: float = 0.0
    applied: bool = False


class Trainer:
    """Runs the per-step recipe on a model; owns optimizer streams and memory state."""

    def __init__(self, model, sched, batch_size, adam_kwargs=None):
        self.model = model
        self.sched = sched
        self.batch_size = batch_size
        adam_kwargs = adam_kwargs or {}
        self.transformer = OptimizerStream("transformer", model.transformer_parameters(), **adam_kwargs)
        self.compression = OptimizerStream("compression", model.compression_parameters(), **adam_kwargs)
        self.state = model.init_state(batch_size)
        self.step = 0

    def train_step(self, windows):
        """One iteration over ``unroll_windows`` consecutive ``(inputs, targets)`` windows."""
        model = self.model
        task_total = None
        aux_values = []
        n_windows = len(windows)
        t0 = time.perf_counter()
        state = self.state
        for inputs, targets in windows:
            out = model.forward(inputs, state, targets=targets, mode="train")
            state = out.state
            if out.aux_losses:
                aux = out.aux_total
                aux_values.append(aux.item())
                ag.backward(aux)
            task_total = out.loss if task_total is None else task_total + out.loss
        task = task_total * (1.0 / n_windows)
        task_value = task.item()
        if not math.isfinite(task_value):
            raise TrainingFault("non-finite task loss", self.step)
        ag.backward(task)
        self.state = state.detached()
        self.transformer.pending += 1
        self.compression.pending += 1

        lr = lr_at(self.step, self.sched)
        metrics = StepMetrics(step=self.step, lr=lr, task_loss=task_value,
                              aux_loss=float(np.sum(aux_values)) if aux_values else 0.0)
        if should_apply(self.step, self.sched):
            metrics.grad_norm = self.transformer.apply(lr, self.sched.clip_norm, self.step)
            self.compression.apply(lr, self.sched.clip_norm, self.step)
            metrics.applied = True
        elapsed = time.perf_counter() - t0
        n_tokens = sum(np.asarray(x).size for x, _ in windows)
        metrics.tokens_per_sec = n_tokens / elapsed if elapsed > 0 else 0.0
        self.step += 1
        return metrics


METRICS_HEADER = ["step", "lr", "task_loss_nats", "aux_loss", "grad_norm", "tokens_per_sec"]


def _group(batches, size):
    group = []
    for batch in batches:
        group.append(batch)
        if len(group) == size:
            yield group
            group = []


def train_loop(trainer, batches, n_steps, out_dir=None, checkpoint_every=0,
               save_checkpoint=None, callback=None):
    """Drive ``trainer`` over a contiguous batch iterator for ``n_steps`` iterations.

    Writes ``metrics.csv`` (one row per applied update) under ``out_dir`` and
    calls ``save_checkpoint(path, trainer)`` every ``checkpoint_every``
    applied updates. A non-finite loss writes ``diagnostic.ckpt`` and
    re-raises. Returns the list of per-step metrics.
    """
    history = []
    writer = fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "metrics.csv", "a" if trainer.step else "w", newline="")
        writer = csv.writer(fh)
        if not trainer.step:
            writer.writerow(METRICS_HEADER)
    applied = 0
    try:
        for windows in _group(batches, trainer.sched.unroll_windows):
            if len(history) >= n_steps:
                break
            try:
                metrics = trainer.train_step(windows)
            except TrainingFault:
                if out_dir is not None and save_checkpoint is not None:
                    save_checkpoint(out_dir / "diagnostic.ckpt", trainer)
                raise
            history.append(metrics)
            if callback is not None:
                callback(metrics)
            if metrics.applied:
                applied += 1
                if writer is not None:
                    writer.writerow([metrics.step, repr(metrics.lr), repr(metrics.task_loss),
                                     repr(metrics.aux_loss), repr(metrics.grad_norm),
                                     f"{metrics.tokens_per_sec:.1f}"])
                if checkpoint_every and save_checkpoint is not None and applied % checkpoint_every == 0:
                    save_checkpoint(out_dir / f"step_{trainer.step:08d}.ckpt", trainer)
            if metrics.step % 100 == 0:
                logger.info("step %d lr %.3g loss %.4f aux %.4f", metrics.step, metrics.lr,
                            metrics.task_loss, metrics.aux_loss)
    finally:
        if fh is not None:
            fh.close()
    return history
