"""The Compressive Transformer layer stack.

Per layer: attend over ``[cm; m; h]``, skip + layer norm, mixing MLP, skip +
layer norm (post-norm). After a full window each layer's input is pushed
into memory and the evicted rows are compressed into the compressed memory.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .attention import AttentionParams, multihead_attention
from .autograd import Tensor
from .compression import (
    CompressionSpec,
    Compressor,
    attention_reconstruction_loss,
    auto_encoding_loss,
)
from .errors import ConfigError, DataError
from .memory import init_state, update_memories


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    n_s: int = 32
    n_m: int = 32
    n_cm: int = 32
    vocab_size: int = 256
    mlp_ratio: float = 4.0
    dropout: float = 0.0
    layer_norm_eps: float = 1e-5
    compression: CompressionSpec = field(default_factory=CompressionSpec)

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "n_s", "n_m", "n_cm", "vocab_size"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.n_s > self.n_m:
            raise ConfigError(f"n_s={self.n_s} must not exceed n_m={self.n_m}")
        if self.n_cm and self.n_s < self.compression.rate:
            raise ConfigError(f"n_s={self.n_s} is shorter than the compression rate")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def c(self):
        return self.compression.rate

    @property
    def mlp_hidden(self):
        return int(round(self.mlp_ratio * self.d_model))


@dataclass
class StepOutput:
    logits: Tensor
    state: object
    loss: Tensor = None
    token_losses: np.ndarray = None
    aux_losses: list = field(default_factory=list)
    traces: list = field(default_factory=list)

    @property
    def aux_total(self):
        if not self.aux_losses:
            return None
        total = self.aux_losses[0]
        for loss in self.aux_losses[1:]:
            total = total + loss
        return total


def sequence_loss(logits, targets, reduction="mean", ignore_index=-1):
    """Next-token cross-entropy in nats.

    ``reduction`` is ``"mean"`` (over non-ignored positions), ``"sum"`` or
    ``"none"`` (per-position tensor).
    """
    per_token = ag.token_nll(logits, targets, ignore_index)
    if reduction == "none":
        return per_token
    total = per_token.sum()
    if reduction == "sum":
        return total
    count = int((np.asarray(targets) != ignore_index).sum())
    return total * (1.0 / max(count, 1))


class CompressiveTransformer:
    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        d, hidden = config.d_model, config.mlp_hidden
        self.embedding = Tensor(rng.normal(0.0, d ** -0.5, (config.vocab_size, d)),
                                requires_grad=True)
        self.layers = []
        for _ in range(config.n_layers):
            self.layers.append({
                "attn": AttentionParams.init(d, rng),
                "ln1_gain": Tensor(np.ones(d), requires_grad=True),
                "ln1_bias": Tensor(np.zeros(d), requires_grad=True),
                "mlp_w1": Tensor(rng.normal(0.0, d ** -0.5, (d, hidden)), requires_grad=True),
                "mlp_b1": Tensor(np.zeros(hidden), requires_grad=True),
                "mlp_w2": Tensor(rng.normal(0.0, hidden ** -0.5, (hidden, d)), requires_grad=True),
                "mlp_b2": Tensor(np.zeros(d), requires_grad=True),
                "ln2_gain": Tensor(np.ones(d), requires_grad=True),
                "ln2_bias": Tensor(np.zeros(d), requires_grad=True),
            })
        self.compressor = Compressor(config.compression, d, config.n_layers)
        self.dropout_rng = np.random.default_rng(seed + 1)

    # -- parameters ---------------------------------------------------------

    def transformer_parameters(self):
        params = {"embedding": self.embedding}
        for i, layer in enumerate(self.layers):
            params.update(layer["attn"].named(f"layers.{i}.attn"))
            for name, tensor in layer.items():
                if name != "attn":
                    params[f"layers.{i}.{name}"] = tensor
        return params

    def compression_parameters(self):
        return self.compressor.parameters()

    def parameters(self):
        params = self.transformer_parameters()
        params.update(self.compression_parameters())
        return params

    def parameter_count(self):
        return {
            "transformer": sum(p.data.size for p in self.transformer_parameters().values()),
            "compression": sum(p.data.size for p in self.compression_parameters().values()),
        }

    def load_parameters(self, arrays):
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ConfigError(f"missing parameter blocks: {sorted(missing)}")
        for name, tensor in params.items():
            value = np.asarray(arrays[name])
            if value.shape != tensor.shape:
                raise ConfigError(f"{name}: shape {value.shape} != {tensor.shape}")
            tensor.data = value.astype(tensor.dtype)

    def with_memory(self, n_m=None, n_cm=None):
        """A view sharing all parameters but sized for different memories."""
        config = replace(self.config,
                         n_m=self.config.n_m if n_m is None else n_m,
                         n_cm=self.config.n_cm if n_cm is None else n_cm)
        clone = object.__new__(CompressiveTransformer)
        clone.__dict__.update(self.__dict__)
        clone.config = config
        return clone

    def init_state(self, batch=1):
        c = self.config
        return init_state(c.n_layers, c.n_m, c.n_cm, c.d_model, batch=batch,
                          dtype=self.embedding.dtype)

    # -- forward ------------------------------------------------------------

    def _mlp(self, layer, a, train):
        hidden = ag.gelu(a @ layer["mlp_w1"] + layer["mlp_b1"])
        out = hidden @ layer["mlp_w2"] + layer["mlp_b2"]
        return ag.dropout(out, self.config.dropout if train else 0.0, self.dropout_rng)

    def forward(self, x, state, targets=None, mode="train", update=True, trace=False,
                detach_memory=None):
        # constants created inside follow the parameters' precision, not the caller's
        with ag.precision(ag.precision_of(self.embedding.dtype)):
            return self._forward(x, state, targets, mode, update, trace, detach_memory)

    def _forward(self, x, state, targets, mode, update, trace, detach_memory):
        """Process one window of token ids ``(B, n)`` (or ``(n,)``) given ``state``.

        With ``update`` the window must be exactly ``n_s`` long and the
        returned state has both FIFOs advanced. ``detach_memory`` defaults to
        True unless the compression objective is BPTT in train mode.
        """
        cfg = self.config
        x = np.asarray(x)
        if x.ndim == 1:
            x = x[None, :]
            if targets is not None:
                targets = np.asarray(targets)[None, :]
        if x.size and (x.min() < 0 or x.max() >= cfg.vocab_size):
            raise DataError(f"token id out of range [0, {cfg.vocab_size})")
        b, n = x.shape
        if update and n != cfg.n_s:
            raise DataError(f"memory update needs a full window of {cfg.n_s}, got {n}")
        if state.batch != b:
            raise DataError(f"state batch {state.batch} != input batch {b}")
        train = mode == "train"
        attn_dropout = cfg.dropout if train else 0.0
        objective = cfg.compression.objective
        if detach_memory is None:
            detach_memory = not (train and objective == "bptt")

        # usage is accumulated on a private copy so ``state`` stays reusable
        state = replace(state, usage=list(state.usage))
        h = ag.embedding(self.embedding, x)
        inputs, traces = [], []
        for i, layer in enumerate(self.layers):
            mem = ag.concat([state.cmem[i], state.mem[i]], axis=1)
            need_weights = trace or (cfg.compression.variant == "most_used" and update)
            attended, weights = multihead_attention(
                h, mem, layer["attn"], cfg.n_heads, trace=need_weights,
                dropout=attn_dropout, rng=self.dropout_rng)
            if weights is not None and update:
                state.add_usage(i, weights)
            if trace:
                traces.append(weights)
            a = ag.layer_norm(attended + h, layer["ln1_gain"], layer["ln1_bias"], cfg.layer_norm_eps)
            inputs.append(h)
            h = ag.layer_norm(self._mlp(layer, a, train) + a,
                              layer["ln2_gain"], layer["ln2_bias"], cfg.layer_norm_eps)
        logits = h @ ag.transpose(self.embedding, (1, 0))

        aux = []
        new_state = None
        if update:
            new_state, old_mems, new_cms = update_memories(
                state, inputs, self.compressor, detach=detach_memory)
            # BPTT has no auxiliary objective; in eval mode its compression is still measured
            measure = objective != "bptt" or not train
            if cfg.n_cm and measure:
                for i, (old, new) in enumerate(zip(old_mems, new_cms)):
                    if objective != "auto_encoding":
                        aux.append(attention_reconstruction_loss(
                            inputs[i], old, self.layers[i]["attn"], new_cm=new))
                    else:
                        aux.append(auto_encoding_loss(
                            old, new, lambda cm, i=i: self.compressor.decode(i, cm)))

        out = StepOutput(logits=logits, state=new_state, aux_losses=aux, traces=traces)
        if targets is not None:
            per_token = sequence_loss(logits, targets, reduction="none")
            out.token_losses = per_token.data
            count = int((np.asarray(targets) != -1).sum())
            out.loss = per_token.sum() * (1.0 / max(count, 1))
        return out

    __call__ = forward
