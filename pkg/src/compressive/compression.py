"""Compression functions for evicted memories and their auxiliary losses.

A compressor maps ``(B, n_s, d)`` evicted rows to ``(B, n_s // c, d)``
compressed rows, with one set of parameters per layer. Auxiliary objectives
train those parameters from detached inputs, so they never reach the
transformer weights.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .attention import content_attention
from .autograd import Tensor
from .errors import ConfigError, DegenerateInputError, DimensionError

VARIANTS = ("max_pool", "mean_pool", "conv", "dilated_conv", "most_used")
OBJECTIVES = ("bptt", "auto_encoding", "attention_reconstruction")
_OBJECTIVE_ALIASES = {"none": "bptt", "attention": "attention_reconstruction", "ae": "auto_encoding"}


@dataclass(frozen=True)
class CompressionSpec:
    variant: str = "conv"
    rate: int = 3
    objective: str = "attention_reconstruction"

    def __post_init__(self):
        objective = _OBJECTIVE_ALIASES.get(self.objective, self.objective)
        object.__setattr__(self, "objective", objective)
        if self.variant not in VARIANTS:
            raise ConfigError(f"compression variant must be one of {VARIANTS}, got {self.variant!r}")
        if objective not in OBJECTIVES:
            raise ConfigError(f"compression objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if int(self.rate) != self.rate or self.rate < 1:
            raise ConfigError(f"compression rate must be an integer >= 1, got {self.rate!r}")

    @property
    def learnable(self):
        return self.variant in ("conv", "dilated_conv")

    @property
    def uses_aux_loss(self):
        return self.objective != "bptt"


def most_used_select(old_mem, usage, k):
    """Keep the ``k`` rows with the highest usage, in their original order.

    Ties go to the older (lower-index) row. Works on ``(n, d)`` with usage
    ``(n,)`` or batched ``(B, n, d)`` with usage ``(B, n)``.
    """
    old_mem = ag.as_tensor(old_mem)
    usage = np.asarray(usage)
    n = old_mem.shape[-2]
    if k > n:
        raise DegenerateInputError(f"cannot keep {k} of {n} rows")
    order = np.argsort(-usage, axis=-1, kind="stable")[..., :k]
    keep = np.sort(order, axis=-1)
    if old_mem.ndim == 2:
        return old_mem[keep]
    rows = np.arange(old_mem.shape[0])[:, None]
    return old_mem[rows, keep]


def _pool_with_tail(x, kind, c):
    # trailing n % c rows join the last window so the row count stays n // c
    n = x.shape[1]
    k = n // c
    tail = n - k * c
    if tail == 0:
        return ag.pool1d(x, kind, c, c)
    last = ag.pool1d(x[:, (k - 1) * c:], kind, c + tail, c + tail)
    if k == 1:
        return last
    return ag.concat([ag.pool1d(x[:, :(k - 1) * c], kind, c, c), last], axis=1)


class Compressor:
    """Per-layer compression functions plus the auto-encoding decoder."""

    def __init__(self, spec, d, n_layers):
        self.spec = spec
        self.d = d
        self.n_layers = n_layers
        self.params = {}
        c = spec.rate
        eye = np.eye(d)
        for i in range(n_layers):
            if spec.variant == "conv":
                # c == 1 starts at identity, c > 1 at mean pooling
                self.params[f"compression.{i}.conv"] = Tensor(
                    np.stack([eye / c] * c), requires_grad=True)
            elif spec.variant == "dilated_conv":
                shift = np.stack([np.zeros((d, d)), eye])
                self.params[f"compression.{i}.dilated1"] = Tensor(shift, requires_grad=True)
                self.params[f"compression.{i}.dilated2"] = Tensor(shift.copy(), requires_grad=True)
                self.params[f"compression.{i}.aggregate"] = Tensor(
                    np.stack([eye / c] * c), requires_grad=True)
            if spec.objective == "auto_encoding":
                # transposed conv, width = stride = c; starts by repeating each slot c times
                self.params[f"compression.{i}.decoder"] = Tensor(np.tile(eye, (1, c)), requires_grad=True)

    def parameters(self):
        return dict(self.params)

    def output_rows(self, n_s):
        return n_s // self.spec.rate

    def compress(self, layer, old_mem, usage=None):
        """Apply this layer's compression function to ``(B, n_s, d)`` rows."""
        c = self.spec.rate
        squeeze = old_mem.ndim == 2
        x = ag.reshape(old_mem, (1,) + old_mem.shape) if squeeze else ag.as_tensor(old_mem)
        n = x.shape[1]
        if n < c:
            raise DegenerateInputError(f"cannot compress {n} rows at rate {c}")
        variant = self.spec.variant
        if variant in ("max_pool", "mean_pool"):
            out = _pool_with_tail(x, variant.split("_")[0], c)
        elif variant == "conv":
            out = ag.conv1d(x, self.params[f"compression.{layer}.conv"], stride=c)
        elif variant == "dilated_conv":
            zeros = ag.constant(np.zeros((x.shape[0], 2, x.shape[2])), x.dtype)
            y = ag.conv1d(ag.concat([zeros[:, :1], x], axis=1),
                          self.params[f"compression.{layer}.dilated1"], dilation=1)
            y = ag.conv1d(ag.concat([zeros, y], axis=1),
                          self.params[f"compression.{layer}.dilated2"], dilation=2)
            out = ag.conv1d(y, self.params[f"compression.{layer}.aggregate"], stride=c)
        else:
            if usage is None:
                usage = np.zeros(x.shape[:2])
            usage = np.asarray(usage).reshape(x.shape[:2])
            out = most_used_select(x, usage, n // c)
        if squeeze:
            out = ag.reshape(out, out.shape[1:])
        return out

    __call__ = compress

    def decode(self, layer, new_cm):
        """Map ``(B, k, d)`` compressed rows back to ``(B, k * c, d)``."""
        key = f"compression.{layer}.decoder"
        if key not in self.params:
            raise ConfigError("decoder exists only for the auto_encoding objective")
        b, k, d = new_cm.shape
        return ag.reshape(new_cm @ self.params[key], (b, k * self.spec.rate, d))


def _per_sample_norm(residual):
    # Frobenius norm per batch element, averaged over the batch
    axes = tuple(range(1, residual.ndim)) if residual.ndim > 2 else None
    norms = ag.l2_norm(residual, axes)
    return norms.mean() if residual.ndim > 2 else norms


def auto_encoding_loss(old_mem, new_cm, decoder):
    """``||old_mem - g(new_cm)||_2`` over the rows the compressor covered."""
    recon = decoder(new_cm)
    covered = recon.shape[-2]
    if covered > old_mem.shape[-2] or recon.shape[-1] != old_mem.shape[-1]:
        raise DimensionError(f"reconstruction {recon.shape} does not fit {old_mem.shape}")
    target = ag.stop_gradient(old_mem)[..., :covered, :]
    return _per_sample_norm(recon - target)


def attention_reconstruction_loss(h, old_mem, params, compress=None, new_cm=None):
    """Content-attention mismatch between evicted memories and their compression.

    ``h``, ``old_mem`` and the attention projections enter detached, so only
    the compression parameters receive gradient. Pass either a ``compress``
    callable applied to the detached ``old_mem`` or a precomputed ``new_cm``.
    """
    h = ag.stop_gradient(h)
    old_mem = ag.stop_gradient(old_mem)
    q = ag.stop_gradient(params.q)
    k = ag.stop_gradient(params.k)
    v = ag.stop_gradient(params.v)
    if new_cm is None:
        new_cm = compress(old_mem)
    target = content_attention(h, old_mem, q, k, v)
    approx = content_attention(h, new_cm, q, k, v)
    return _per_sample_norm(target - approx)


@dataclass
class CompressionLossReport:
    losses: list
    variant: str
    step: int = 0

    def rows(self):
        for layer, loss in enumerate(self.losses):
            yield layer, self.step, self.variant, float(loss)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["layer", "step", "variant", "loss"])
            for row in self.rows():
                writer.writerow(row)
