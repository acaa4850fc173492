"""Relative-position multi-head attention over [compressed memory; memory; sequence].

Scores follow the four-term relative decomposition used by TransformerXL:
content-content, content-position, a global content bias ``u`` and a global
position bias ``v``. Key slots are laid out oldest first, so a query at
sequence index i sees key j at distance ``(n_mem + i) - j``.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DegenerateInputError, DimensionError

REGIONS = ("compressed_memory", "memory", "sequence")
BUCKETS_PER_REGION = 6


@dataclass
class AttentionParams:
    q: Tensor
    k: Tensor
    v: Tensor
    o: Tensor
    r: Tensor
    u: Tensor
    pos_bias: Tensor

    @classmethod
    def init(cls, d, rng, std=None):
        std = d ** -0.5 if std is None else std

        def mat():
            return Tensor(rng.normal(0.0, std, (d, d)), requires_grad=True)

        return cls(q=mat(), k=mat(), v=mat(), o=mat(), r=mat(),
                   u=Tensor(np.zeros(d), requires_grad=True),
                   pos_bias=Tensor(np.zeros(d), requires_grad=True))

    def named(self, prefix):
        return {f"{prefix}.{name}": getattr(self, name)
                for name in ("q", "k", "v", "o", "r", "u", "pos_bias")}


def sinusoid_table(length, d):
    """Row k encodes relative distance k: ``[sin(k w), cos(k w)]`` with TransformerXL frequencies."""
    half = (d + 1) // 2
    inv_freq = 1.0 / (10000.0 ** (np.arange(0, 2 * half, 2, dtype=np.float64) / d))
    angles = np.arange(length, dtype=np.float64)[:, None] * inv_freq[None, :]
    table = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    return table[:, :d]


def relative_distances(n_query, n_mem):
    """Distance matrix ``(n_query, n_mem + n_query)``; negative entries are future keys."""
    i = np.arange(n_query)[:, None]
    j = np.arange(n_mem + n_query)[None, :]
    return n_mem + i - j


def _split_heads(x, n, n_heads):
    # (B, n, d) -> (B, H, n, dh)
    b, _, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def multihead_attention(h, mem, params, n_heads, trace=False, dropout=0.0, rng=None):
    """Causal relative-position attention of the window ``h`` over ``[mem; h]``.

    ``h`` is ``(B, n, d)`` or ``(n, d)``; ``mem`` has the same leading layout
    with any number of rows (zero rows allowed). Returns the projected output
    and, when ``trace`` is set, the attention weights ``(B, H, n, n_mem + n)``.
    """
    squeeze = h.ndim == 2
    if squeeze:
        h = ag.reshape(h, (1,) + h.shape)
        if mem is not None:
            mem = ag.reshape(ag.as_tensor(mem), (1,) + mem.shape)
    b, n, d = h.shape
    if d % n_heads:
        raise DimensionError(f"d={d} not divisible by {n_heads} heads")
    n_mem = 0 if mem is None else mem.shape[1]
    if n_mem and (mem.shape[0] != b or mem.shape[2] != d):
        raise DimensionError(f"memory shape {mem.shape} incompatible with window {h.shape}")
    length = n_mem + n
    dh = d // n_heads
    keys_in = ag.concat([mem, h], axis=1) if n_mem else h

    q = _split_heads(h @ params.q, n, n_heads)
    k = _split_heads(keys_in @ params.k, length, n_heads)
    v = _split_heads(keys_in @ params.v, length, n_heads)
    table = ag.constant(sinusoid_table(length, d), h.dtype)
    rel = (table @ params.r).reshape(length, n_heads, dh).transpose(1, 2, 0)
    u = params.u.reshape(n_heads, 1, dh)
    pos_bias = params.pos_bias.reshape(n_heads, 1, dh)

    content = (q + u) @ ag.swapaxes(k, -1, -2)
    position = ag.rel_shift((q + pos_bias) @ rel, n_mem, length)
    scores = (content + position) * (1.0 / np.sqrt(dh))
    weights = ag.masked_softmax(scores, n_mem)
    dropped = ag.dropout(weights, dropout, rng)
    out = (dropped @ v).transpose(0, 2, 1, 3).reshape(b, n, d) @ params.o
    if squeeze:
        out = out.reshape(n, d)
    return out, (weights.data.copy() if trace else None)


def content_attention(h, m, q, k, v):
    """Single-projection content attention ``softmax((hQ)(mK)^T)(mV)``, unmasked, unscaled."""
    if m.shape[-2] == 0:
        raise DegenerateInputError("content attention over an empty memory")
    scores = (h @ q) @ ag.swapaxes(m @ k, -1, -2)
    return ag.softmax(scores, axis=-1) @ (m @ v)


@dataclass
class BucketReport:
    means: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray

    def rows(self):
        for idx in range(len(self.means)):
            region = REGIONS[idx // BUCKETS_PER_REGION]
            yield region, idx % BUCKETS_PER_REGION, float(self.means[idx]), float(self.stderr[idx])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["region", "bucket_index", "mean", "stderr"])
            for region, bucket, mean, err in self.rows():
                writer.writerow([region, bucket, repr(mean), repr(err)])


def bucket_bounds(n_cm, n_m, n_s):
    """Column ranges of the 18 buckets: six contiguous groups per region, earlier groups larger."""
    bounds = []
    start = 0
    for size in (n_cm, n_m, n_s):
        for part in np.array_split(np.arange(size), BUCKETS_PER_REGION):
            lo = start + (int(part[0]) if len(part) else size)
            bounds.append((lo, lo + len(part)))
        start += size
    return bounds


def attention_buckets(traces, n_cm, n_m, n_s):
    """Average attention weight per bucket with a 1-sigma standard error.

    Every query row of every head, layer and trace contributes one sample per
    bucket: its mean weight over the bucket's key columns.
    """
    traces = list(traces)
    if not traces:
        raise DegenerateInputError("no attention traces to aggregate")
    width = n_cm + n_m + n_s
    rows = []
    for trace in traces:
        arr = np.asarray(trace, dtype=np.float64)
        if arr.shape[-1] != width:
            raise DimensionError(f"trace width {arr.shape[-1]} != {width}")
        rows.append(arr.reshape(-1, width))
    rows = np.concatenate(rows, axis=0)
    bounds = bucket_bounds(n_cm, n_m, n_s)
    means = np.full(len(bounds), np.nan)
    stderr = np.full(len(bounds), np.nan)
    counts = np.zeros(len(bounds), dtype=np.int64)
    for idx, (lo, hi) in enumerate(bounds):
        if hi <= lo:
            continue
        samples = rows[:, lo:hi].mean(axis=1)
        counts[idx] = samples.size
        means[idx] = samples.mean()
        stderr[idx] = samples.std(ddof=1) / np.sqrt(samples.size) if samples.size > 1 else 0.0
    return BucketReport(means=means, stderr=stderr, counts=counts)
