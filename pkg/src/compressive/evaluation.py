"""Evaluation metrics and protocols.

Word-level perplexity normalises the total loss of any tokenization by a
fixed word count, ``exp(L / n_words)``; bits per character divide by
``n_chars * ln 2``.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .attention import attention_buckets
from .data import WORD_PATTERN
from .errors import DegenerateInputError

PG19_TEST_WORDS = 6_966_499
PG19_VALID_WORDS = 3_007_061

FREQUENCY_BUCKETS = (
    (">10K", 10_000, math.inf),
    ("1K-10K", 1_000, 10_000),
    ("100-1K", 100, 1_000),
    ("<100", -1, 100),
)


def bits_per_character(total_loss_nats, n_chars):
    if n_chars <= 0:
        raise DegenerateInputError("bits per character needs n_chars > 0")
    return total_loss_nats / (n_chars * math.log(2.0))


def word_level_perplexity(total_loss_nats, n_words):
    if n_words <= 0:
        raise DegenerateInputError("word-level perplexity needs n_words > 0")
    return math.exp(total_loss_nats / n_words)


def frequency_bucket(count):
    for name, lo, hi in FREQUENCY_BUCKETS:
        if lo < count <= hi:
            return name
    return FREQUENCY_BUCKETS[-1][0]


def bucket_perplexity(word_losses, freq_table, buckets=FREQUENCY_BUCKETS):
    """Perplexity per training-frequency bucket.

    ``word_losses`` is a sequence of ``(word, loss_nats)``. Words absent from
    the table count as frequency 0. Empty buckets are omitted. Returns
    ``{bucket: (ppl, n_words)}`` including an ``"All"`` entry.
    """
    sums, counts = {}, {}
    for word, loss in word_losses:
        count = freq_table.get(word, 0)
        name = next((b for b, lo, hi in buckets if lo < count <= hi), buckets[-1][0])
        sums[name] = sums.get(name, 0.0) + loss
        counts[name] = counts.get(name, 0) + 1
    out = {}
    for name, _, _ in buckets:
        if counts.get(name):
            out[name] = (math.exp(sums[name] / counts[name]), counts[name])
    total = sum(counts.values())
    if total:
        out["All"] = (math.exp(sum(sums.values()) / total), total)
    return out


def align_losses_to_words(text, token_losses, kind="char"):
    """Sum per-token losses into words.

    For ``char`` streams (UTF-8 bytes) each word collects the bytes of its
    surface plus any whitespace before it; trailing whitespace joins the
    last word. For ``word`` streams the losses already line up with words.
    """
    token_losses = np.asarray(token_losses, dtype=np.float64)
    if kind == "word":
        words = WORD_PATTERN.findall(text)
        return list(zip(words, token_losses[: len(words)].tolist()))
    data = text.encode("utf-8")
    if len(token_losses) != len(data):
        raise ValueError(f"{len(token_losses)} losses for {len(data)} bytes")
    pairs = []
    cursor = 0
    for match in WORD_PATTERN.finditer(text):
        end = len(text[: match.end()].encode("utf-8"))
        pairs.append([match.group(), float(token_losses[cursor:end].sum())])
        cursor = end
    if pairs and cursor < len(data):
        pairs[-1][1] += float(token_losses[cursor:].sum())
    return [tuple(p) for p in pairs]


@dataclass
class EvalReport:
    total_loss: float
    n_tokens: int
    n_chars: int = 0
    n_words: int = 0
    layer_losses: list = field(default_factory=list)
    token_losses: np.ndarray = None
    traces: list = field(default_factory=list)
    n_m: int = 0
    n_cm: int = 0
    buckets: dict = field(default_factory=dict)

    @property
    def mean_loss(self):
        return self.total_loss / max(self.n_tokens, 1)

    @property
    def bpc(self):
        return bits_per_character(self.total_loss, self.n_chars) if self.n_chars else float("nan")

    @property
    def word_ppl(self):
        return word_level_perplexity(self.total_loss, self.n_words) if self.n_words else float("nan")

    def metrics(self):
        return {
            "n_m": self.n_m,
            "n_cm": self.n_cm,
            "n_tokens": self.n_tokens,
            "total_loss_nats": self.total_loss,
            "loss_per_token_nats": self.mean_loss,
            "bpc": self.bpc,
            "word_ppl": self.word_ppl,
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            for key, value in self.metrics().items():
                writer.writerow([key, repr(value)])
            writer.writerow([])
            writer.writerow(["layer", "loss"])
            for layer, loss in enumerate(self.layer_losses):
                writer.writerow([layer, repr(loss)])
            if self.buckets:
                writer.writerow([])
                writer.writerow(["bucket", "ppl", "count"])
                for name, (ppl, count) in self.buckets.items():
                    writer.writerow([name, repr(ppl), count])


def evaluate(model, ids, n_m=None, n_cm=None, trace=False, max_windows=None,
             n_chars=None, n_words=None):
    """Run ``model`` over ``ids`` in contiguous non-overlapping windows.

    Memories are rebuilt at the evaluation sizes and start at zero; no
    parameter changes. The last partial window is scored without a memory
    update. Per-layer compression losses are averaged over all updates.
    """
    if n_m is not None or n_cm is not None:
        model = model.with_memory(n_m, n_cm)
    cfg = model.config
    ids = np.asarray(ids)
    inputs, targets = ids[:-1], ids[1:]
    n_s = cfg.n_s
    n_full = len(inputs) // n_s
    if max_windows is not None:
        n_full = min(n_full, max_windows)
    state = model.init_state(1)
    losses, traces = [], []
    layer_sums = np.zeros(cfg.n_layers)
    n_updates = 0
    with ag.no_grad():
        for w in range(n_full):
            sl = slice(w * n_s, (w + 1) * n_s)
            out = model.forward(inputs[sl], state, targets=targets[sl], mode="eval", trace=trace)
            state = out.state
            losses.append(out.token_losses[0].astype(np.float64))
            if trace:
                traces.append(np.stack(out.traces))
            if out.aux_losses:
                layer_sums += [a.item() for a in out.aux_losses]
                n_updates += 1
        tail = len(inputs) - n_full * n_s
        if max_windows is None and tail > 0:
            out = model.forward(inputs[-tail:], state, targets=targets[-tail:], mode="eval",
                                update=False)
            losses.append(out.token_losses[0].astype(np.float64))
    token_losses = np.concatenate(losses) if losses else np.zeros(0)
    report = EvalReport(
        total_loss=float(token_losses.sum()),
        n_tokens=len(token_losses),
        n_chars=len(token_losses) if n_chars is None else n_chars,
        n_words=n_words or 0,
        layer_losses=(layer_sums / n_updates).tolist() if n_updates else [],
        token_losses=token_losses,
        traces=traces,
        n_m=cfg.n_m,
        n_cm=cfg.n_cm,
    )
    return report


def attention_bucket_report(report, n_s):
    """Bucket the traces gathered by ``evaluate(..., trace=True)``."""
    return attention_buckets(report.traces, report.n_cm, report.n_m, n_s)


def sweep_memory(model, ids, sizes, vary="n_cm", **kwargs):
    """One evaluation report per memory size."""
    rows = []
    for size in sizes:
        report = evaluate(model, ids, **{vary: size}, **kwargs)
        rows.append(report)
    return rows
