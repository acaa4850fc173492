"""Per-layer FIFO memory and compressed memory.

After each window every layer pushes its input activations into memory; the
oldest ``n_s`` memory rows are evicted, compressed to ``n_s // c`` rows and
pushed into the compressed memory. Only slicing and concatenation happen
here; the compression function itself is supplied by the caller.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError


@dataclass
class MemoryState:
    mem: list
    cmem: list
    usage: list
    mem_fill: int = 0
    cmem_fill: int = 0
    steps: int = field(default=0)

    @property
    def n_layers(self):
        return len(self.mem)

    @property
    def n_m(self):
        return self.mem[0].shape[1] if self.mem else 0

    @property
    def n_cm(self):
        return self.cmem[0].shape[1] if self.cmem else 0

    @property
    def batch(self):
        return self.mem[0].shape[0] if self.mem else 0

    def detached(self):
        return MemoryState(
            mem=[ag.stop_gradient(m) for m in self.mem],
            cmem=[ag.stop_gradient(c) for c in self.cmem],
            usage=[u.copy() for u in self.usage],
            mem_fill=self.mem_fill,
            cmem_fill=self.cmem_fill,
            steps=self.steps,
        )

    def snapshot(self):
        """Deep copy with no graph references."""
        return MemoryState(
            mem=[ag.constant(m.data.copy(), m.dtype) for m in self.mem],
            cmem=[ag.constant(c.data.copy(), c.dtype) for c in self.cmem],
            usage=[u.copy() for u in self.usage],
            mem_fill=self.mem_fill,
            cmem_fill=self.cmem_fill,
            steps=self.steps,
        )

    def is_attached(self):
        return any(t.requires_grad for t in self.mem + self.cmem)

    def add_usage(self, layer, weights):
        """Accumulate attention received by memory slots.

        ``weights`` is ``(B, H, n_q, n_cm + n_m + n_q)``; the memory columns
        are averaged over heads and queries.
        """
        n_cm, n_m = self.n_cm, self.n_m
        self.usage[layer] = self.usage[layer] + weights[..., n_cm:n_cm + n_m].mean(axis=(1, 2))

    copy = snapshot


def init_state(n_layers, n_m, n_cm, d, batch=1, dtype=None):
    """All-zero memories shaped ``(batch, n_m, d)`` and ``(batch, n_cm, d)`` per layer."""
    if min(n_layers, n_m, n_cm, d, batch) < 0:
        raise ConfigError("memory sizes must be non-negative")
    dtype = dtype or ag.default_dtype()
    with ag.precision(ag.precision_of(dtype)):
        return MemoryState(
            mem=[Tensor(np.zeros((batch, n_m, d))) for _ in range(n_layers)],
            cmem=[Tensor(np.zeros((batch, n_cm, d))) for _ in range(n_layers)],
            usage=[np.zeros((batch, n_m), dtype=np.float64) for _ in range(n_layers)],
        )


def update_memories(state, hidden, compress, detach=True):
    """Push one window of per-layer activations through both FIFOs.

    ``hidden[i]`` is the ``(B, n_s, d)`` input of layer i for the window just
    processed. ``compress(layer, old_mem, old_usage)`` maps the evicted
    ``(B, n_s, d)`` rows to ``(B, n_s // c, d)``. Returns the new state plus
    the evicted rows and their compressed form for each layer; the latter
    keep their graph so auxiliary losses can train the compressor. With
    ``detach`` the stored tensors carry no graph.
    """
    n_m, n_cm = state.n_m, state.n_cm
    if len(hidden) != state.n_layers:
        raise ConfigError(f"got {len(hidden)} layers of activations for {state.n_layers} memories")
    n_s = hidden[0].shape[1]
    if n_s > n_m:
        raise ConfigError(f"window n_s={n_s} exceeds memory n_m={n_m}")

    mems, cmems, usages, old_mems, new_cms = [], [], [], [], []
    for i, h in enumerate(hidden):
        m, cm, usage = state.mem[i], state.cmem[i], state.usage[i]
        old_mem = m[:, :n_s]
        old_usage = usage[:, :n_s]
        new_m = ag.concat([m, h], axis=1)[:, -n_m:] if n_m else m
        if n_cm:
            new_cm = compress(i, old_mem, old_usage)
            updated_cm = ag.concat([cm, new_cm], axis=1)[:, -n_cm:]
        else:
            new_cm = None
            updated_cm = cm
        if detach:
            new_m = ag.stop_gradient(new_m)
            updated_cm = ag.stop_gradient(updated_cm)
        mems.append(new_m)
        cmems.append(updated_cm)
        # evicted slots leave memory; their usage does not follow them
        usages.append(np.concatenate([usage, np.zeros((usage.shape[0], n_s))], axis=1)[:, -n_m:])
        old_mems.append(old_mem)
        new_cms.append(new_cm)

    evicted_real = state.mem_fill + n_s > n_m
    gained = new_cms[0].shape[1] if (n_cm and evicted_real) else 0
    new_state = MemoryState(
        mem=mems,
        cmem=cmems,
        usage=usages,
        mem_fill=min(n_m, state.mem_fill + n_s),
        cmem_fill=min(n_cm, state.cmem_fill + gained),
        steps=state.steps + 1,
    )
    return new_state, old_mems, new_cms


@dataclass(frozen=True)
class RangeReport:
    max_temporal_range: int
    attention_cost: int


def temporal_range(n_layers, n_m, n_cm, c):
    """Longest token distance information can travel: ``l * (n_m + c * n_cm)``."""
    return n_layers * (n_m + c * n_cm)


def attention_cost(n_s, n_m, n_cm):
    """Attention score evaluations per layer and head for one window."""
    return n_s * n_s + n_s * (n_m + n_cm)


def range_report(n_layers, n_m, n_cm, c, n_s):
    return RangeReport(temporal_range(n_layers, n_m, n_cm, c), attention_cost(n_s, n_m, n_cm))
