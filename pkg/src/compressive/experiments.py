"""Desk-scale experiments: synthetic long-range recall and a char-LM comparison.

Both compare a compressive model against a TransformerXL baseline with the
same attention cost (``n_cm = 0``, memory ``n_m + n_cm``).
"""

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from .compression import CompressionSpec
from .data import contiguous_batches, episodes_to_stream, synthetic_recall
from .errors import ConfigError
from .evaluation import evaluate
from .memory import attention_cost
from .model import CompressiveTransformer, ModelConfig
from .training import TrainSchedule, Trainer


def txl_baseline(config):
    """Same window and attention cost, no compressed memory."""
    return replace(config, n_m=config.n_m + config.n_cm, n_cm=0)


# -- synthetic recall ------------------------------------------------------------

def recall_row_stream(task, lead, seed, chunk=256):
    """Endless ``(tokens, targets)`` chunks of one row's episode stream."""
    first = True
    index = 0
    while True:
        spec = replace(task, n_episodes=chunk, seed=seed * 1_000_003 + index)
        tokens, targets = episodes_to_stream(synthetic_recall(spec), lead=lead if first else 0)
        first = False
        index += 1
        yield tokens, targets


def recall_batches(task, batch_size, n_s, lead=1, seed=0):
    """Endless ``(B, n_s)`` windows; every row follows its own episode stream.

    All rows share the same phase, so with ``lead = 1`` and ``seq_len`` a
    multiple of ``n_s`` each query lands on the first position of a window.
    """
    rows = [recall_row_stream(task, lead, seed * batch_size + b) for b in range(batch_size)]
    buffers = [(np.zeros(0, np.int64), np.zeros(0, np.int64)) for _ in rows]
    while True:
        xs, ys = [], []
        for b, row in enumerate(rows):
            tok, tgt = buffers[b]
            while len(tok) < n_s:
                more_tok, more_tgt = next(row)
                tok, tgt = np.concatenate([tok, more_tok]), np.concatenate([tgt, more_tgt])
            xs.append(tok[:n_s])
            ys.append(tgt[:n_s])
            buffers[b] = (tok[n_s:], tgt[n_s:])
        yield np.stack(xs), np.stack(ys)


def recall_accuracy(model, task, n_windows, batch_size=32, lead=1, seed=10_000):
    """Argmax accuracy at scored (query) positions on held-out episodes."""
    state = model.init_state(batch_size)
    correct = total = 0
    batches = recall_batches(task, batch_size, model.config.n_s, lead=lead, seed=seed)
    with ag.no_grad():
        for _ in range(n_windows):
            x, y = next(batches)
            out = model.forward(x, state, mode="eval")
            state = out.state
            mask = y != -1
            if mask.any():
                pred = out.logits.data.argmax(axis=-1)
                correct += int((pred[mask] == y[mask]).sum())
                total += int(mask.sum())
    return correct / max(total, 1)


@dataclass
class RecallResult:
    label: str
    seed: int
    accuracy: float
    steps: int
    seconds: float
    chance: float


def recall_config(task, n_s=16, n_m=16, n_cm=16, variant="mean_pool", rate=3, d_model=32,
                  n_heads=2, n_layers=1):
    if task.seq_len % n_s:
        raise ConfigError("episode length must be a multiple of the window for aligned queries")
    return ModelConfig(n_layers=n_layers, d_model=d_model, n_heads=n_heads, n_s=n_s, n_m=n_m,
                       n_cm=n_cm, vocab_size=task.vocab_size, mlp_ratio=2.0,
                       compression=CompressionSpec(variant=variant, rate=rate,
                                                   objective="attention_reconstruction"))


def train_recall(config, task, seed, max_steps=20_000, batch_size=16, target=0.9,
                 check_every=250, eval_windows=64, sched=None, label="model"):
    """Train on the recall stream until held-out accuracy reaches ``target``."""
    sched = sched or TrainSchedule(lr_min=1e-4, lr_max=2e-3, warmup_steps=200,
                                   decay_steps=max_steps, clip_norm=1.0, switch_step=max_steps)
    model = CompressiveTransformer(config, seed=seed)
    trainer = Trainer(model, sched, batch_size)
    batches = recall_batches(task, batch_size, config.n_s, seed=seed)
    t0 = time.perf_counter()
    accuracy = 0.0
    step = 0
    while step < max_steps:
        trainer.train_step([next(batches)])
        step += 1
        if step % check_every == 0 or step == max_steps:
            accuracy = recall_accuracy(model, task, eval_windows, seed=10_000 + seed)
            if accuracy >= target:
                break
    return RecallResult(label, seed, accuracy, step, time.perf_counter() - t0, task.chance)


# -- char LM ---------------------------------------------------------------------

@dataclass
class LMResult:
    label: str
    seed: int
    bpc: float
    steps: int
    seconds: float
    cost: int


def train_char_lm(config, train_ids, valid_ids, seed, steps, batch_size=16, sched=None,
                  eval_windows=None, label="model"):
    """Train for a fixed step budget; report validation bits per character."""
    sched = sched or TrainSchedule(lr_min=1e-5, lr_max=2e-3, warmup_steps=min(200, steps // 10),
                                   decay_steps=steps, clip_norm=0.5, switch_step=steps)
    model = CompressiveTransformer(config, seed=seed)
    trainer = Trainer(model, sched, batch_size)
    t0 = time.perf_counter()
    done = 0
    while done < steps:
        for window in contiguous_batches(train_ids, batch_size, config.n_s):
            trainer.train_step([window])
            done += 1
            if done == steps:
                break
    report = evaluate(model, valid_ids, max_windows=eval_windows)
    bpc = report.mean_loss / math.log(2.0)
    return LMResult(label, seed, bpc, steps, time.perf_counter() - t0,
                    attention_cost(config.n_s, config.n_m, config.n_cm))
