"""Independent reference implementations used as test oracles.

Everything here is written with plain loops and numpy, sharing no code with
the package beyond parameter containers.
"""

import math

import numpy as np


def numeric_grad(f, arrays, eps=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every array in ``arrays`` (in place)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + eps
            up = f()
            flat[idx] = keep - eps
            down = f()
            flat[idx] = keep
            gflat[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def rel_error(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        return float("inf")
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def sinusoid(k, d):
    half = (d + 1) // 2
    out = []
    for idx in range(half):
        out.append(math.sin(k / 10000.0 ** (2 * idx / d)))
    for idx in range(half):
        out.append(math.cos(k / 10000.0 ** (2 * idx / d)))
    return np.array(out[:d])


def brute_attention(h, mem, p, n_heads):
    """Per-query, per-key loop for one batch element: ``h (n, d)``, ``mem (n_mem, d)``."""
    n, d = h.shape
    n_mem = mem.shape[0]
    keys = np.concatenate([mem, h], axis=0)
    dh = d // n_heads
    out = np.zeros((n, d))
    weights = np.zeros((n_heads, n, n_mem + n))
    for head in range(n_heads):
        cols = slice(head * dh, (head + 1) * dh)
        for i in range(n):
            q = h[i] @ p["q"][:, cols]
            scores = []
            for j in range(n_mem + i + 1):
                k = keys[j] @ p["k"][:, cols]
                r = sinusoid(n_mem + i - j, d) @ p["r"][:, cols]
                s = (q + p["u"][cols]) @ k + (q + p["pos_bias"][cols]) @ r
                scores.append(s / math.sqrt(dh))
            scores = np.array(scores)
            w = np.exp(scores - scores.max())
            w /= w.sum()
            weights[head, i, : len(w)] = w
            ctx = sum(w[j] * (keys[j] @ p["v"][:, cols]) for j in range(len(w)))
            out[i, cols] = ctx
    return out @ p["o"], weights


class ListMemory:
    """Row-by-row FIFO simulator for one layer and one batch element."""

    def __init__(self, n_m, n_cm, d):
        self.n_m, self.n_cm = n_m, n_cm
        self.mem = [np.zeros(d) for _ in range(n_m)]
        self.cmem = [np.zeros(d) for _ in range(n_cm)]

    def push(self, rows, compress):
        n_s = len(rows)
        evicted = self.mem[:n_s]
        self.mem = self.mem[n_s:] + [r.copy() for r in rows]
        new = []
        if self.n_cm:
            new = list(compress(np.array(evicted)))
            self.cmem = (self.cmem + new)[len(self.cmem) + len(new) - self.n_cm:]
        return np.array(evicted), new


def pool_oracle(x, c, kind):
    """Pool ``(n, d)`` rows in windows of c; the last window absorbs the remainder."""
    n = len(x)
    k = n // c
    out = []
    for w in range(k):
        lo = w * c
        hi = n if w == k - 1 else lo + c
        block = x[lo:hi]
        out.append(block.mean(axis=0) if kind == "mean" else block.max(axis=0))
    return np.array(out)


def most_used_oracle(x, usage, k):
    ranked = sorted(range(len(x)), key=lambda i: (-usage[i], i))[:k]
    return x[sorted(ranked)]


def nucleus_oracle(probs, p):
    """Grow the candidate set one token at a time in descending-probability order."""
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    chosen, total = [], 0.0
    for i in order:
        chosen.append(i)
        total += float(probs[i])
        if total >= p:
            break
    return chosen


def bucket_oracle(rows, n_cm, n_m, n_s, per_region=6):
    """Bucket means via explicit accumulation over attention rows ``(N, width)``."""
    means, errs = [], []
    start = 0
    for size in (n_cm, n_m, n_s):
        base, extra = divmod(size, per_region)
        lo = start
        for g in range(per_region):
            width = base + (1 if g < extra else 0)
            if width == 0:
                means.append(float("nan"))
                errs.append(float("nan"))
                continue
            samples = [sum(row[lo:lo + width]) / width for row in rows]
            mu = sum(samples) / len(samples)
            var = sum((s - mu) ** 2 for s in samples) / (len(samples) - 1)
            means.append(mu)
            errs.append(math.sqrt(var / len(samples)))
            lo += width
        start += size
    return np.array(means), np.array(errs)


def lr_oracle(step, lr_min, lr_max, warmup, decay):
    if step < warmup:
        return lr_min + (lr_max - lr_min) * step / warmup
    t = min(step - warmup, decay)
    return lr_min + (lr_max - lr_min) * 0.5 * (1 + math.cos(math.pi * t / decay))


def adam_oracle(param, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar-loop Adam over a sequence of gradients (float64)."""
    p = param.astype(np.float64).copy().ravel()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        g = np.asarray(g, np.float64).ravel()
        for i in range(p.size):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            p[i] -= lr * (m[i] / (1 - b1 ** t)) / (math.sqrt(v[i] / (1 - b2 ** t)) + eps)
    return p.reshape(param.shape)
