"""Nucleus (top-p) sampling and autoregressive generation."""

import numpy as np

from . import autograd as ag
from .errors import ConfigError


def nucleus_candidates(probs, p):
    """Indices of the smallest probability-sorted prefix whose mass reaches ``p``.

    Sorting is descending and stable (equal probabilities keep index order).
    If rounding keeps the cumulative mass below ``p``, every index is kept.
    """
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"nucleus p must lie in (0, 1], got {p}")
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(-probs, kind="stable")
    cumulative = np.cumsum(probs[order])
    reached = np.nonzero(cumulative >= p)[0]
    size = int(reached[0]) + 1 if reached.size else len(order)
    return order[:size]


def sample_nucleus(probs, p, rng):
    """Draw one index from the renormalised nucleus of ``probs``."""
    candidates = nucleus_candidates(probs, p)
    mass = np.asarray(probs, dtype=np.float64)[candidates]
    return int(candidates[rng.choice(len(candidates), p=mass / mass.sum())])


def _probs(logits):
    z = logits - logits.max()
    e = np.exp(z.astype(np.float64))
    return e / e.sum()


def generate(model, prefix, length, p=0.98, rng=None):
    """Extend ``prefix`` (token ids) by ``length`` sampled tokens.

    Complete windows of the prefix and of the generated text advance the
    memories; the trailing partial window is re-read without a memory update
    before every draw. Temperature is fixed at 1.
    """
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"nucleus p must lie in (0, 1], got {p}")
    rng = rng if rng is not None else np.random.default_rng(0)
    n_s = model.config.n_s
    tokens = [int(t) for t in prefix]
    state = model.init_state(1)
    committed = 0
    out = []
    with ag.no_grad():
        while committed + n_s <= len(tokens):
            state = model.forward(np.array(tokens[committed:committed + n_s]), state,
                                  mode="eval").state
            committed += n_s
        for _ in range(length):
            pending = tokens[committed:]
            if pending:
                step = model.forward(np.array(pending), state, mode="eval", update=False)
                logits = step.logits.data[0, -1]
            else:
                # nothing to condition on in this window: fall back to uniform
                logits = np.zeros(model.config.vocab_size)
            token = sample_nucleus(_probs(logits), p, rng)
            tokens.append(token)
            out.append(token)
            if len(tokens) - committed == n_s:
                state = model.forward(np.array(tokens[committed:]), state, mode="eval").state
                committed += n_s
    return out
