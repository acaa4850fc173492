"""Corpora, tokenization, contiguous batching and the synthetic recall task."""

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DegenerateInputError

UNK = "<unk>"
WORD_PATTERN = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@dataclass
class Vocabulary:
    kind: str
    itos: list

    def __post_init__(self):
        self.stoi = {s: i for i, s in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    @classmethod
    def bytes(cls):
        return cls("char", [bytes([i]) for i in range(256)])

    @classmethod
    def from_words(cls, words):
        # first-seen order keeps ids deterministic
        seen = dict.fromkeys([UNK])
        seen.update(dict.fromkeys(words))
        return cls("word", list(seen))


@dataclass
class TokenStream:
    ids: np.ndarray
    vocab: Vocabulary
    kind: str

    def __len__(self):
        return len(self.ids)

    def surfaces(self):
        return [self.vocab.itos[i] for i in self.ids]


def _as_text(text):
    if isinstance(text, bytes):
        try:
            return text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(f"input is not valid UTF-8: {exc}") from None
    return text


def split_words(text):
    """Whitespace-separated words with punctuation split off as separate tokens."""
    return WORD_PATTERN.findall(_as_text(text))


def tokenize(text, kind="char", vocab=None):
    """Map text to ids.

    ``char`` uses the 256 UTF-8 byte values. ``word`` builds its vocabulary
    from ``text`` unless ``vocab`` (from the training split) is given, in
    which case unseen words map to ``<unk>``.
    """
    text = _as_text(text)
    if kind == "char":
        ids = np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)
        return TokenStream(ids, vocab or Vocabulary.bytes(), "char")
    if kind == "word":
        words = split_words(text)
        vocab = vocab or Vocabulary.from_words(words)
        unk = vocab.stoi[UNK]
        ids = np.array([vocab.stoi.get(w, unk) for w in words], dtype=np.int64)
        return TokenStream(ids, vocab, "word")
    raise ValueError(f"kind must be 'char' or 'word', got {kind!r}")


def detokenize(stream):
    if stream.kind == "char":
        return bytes(stream.ids.astype(np.uint8).tolist()).decode("utf-8", errors="replace")
    return " ".join(stream.vocab.itos[i] for i in stream.ids)


def frequency_table(train):
    """Occurrence count of every word surface in the training split."""
    if isinstance(train, TokenStream):
        if train.kind != "word":
            raise ValueError("frequency tables are defined over word streams")
        return Counter(train.surfaces())
    return Counter(split_words(train))


def read_corpus(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"corpus file not found: {path}")
    return _as_text(path.read_bytes())


def split_corpus(text, valid_fraction=0.05, test_fraction=0.05):
    """Contiguous train/valid/test split by character position."""
    n = len(text)
    n_test = int(n * test_fraction)
    n_valid = int(n * valid_fraction)
    return text[: n - n_valid - n_test], text[n - n_valid - n_test: n - n_test], text[n - n_test:]


def contiguous_batches(ids, batch_size, n_s, targets=None):
    """Yield ``(inputs, targets)`` windows of shape ``(B, n_s)``.

    The stream is cut into ``B`` contiguous shards; row b of successive
    batches walks shard b in steps of ``n_s``. Targets default to the inputs
    shifted by one. A final partial window is dropped.
    """
    ids = np.asarray(ids)
    if len(ids) < batch_size * (n_s + 1):
        raise DegenerateInputError(
            f"stream of {len(ids)} tokens too short for {batch_size} shards of {n_s + 1}")
    shard = len(ids) // batch_size
    rows = ids[: shard * batch_size].reshape(batch_size, shard)
    if targets is None:
        target_rows = rows[:, 1:]
        rows = rows[:, :-1]
    else:
        targets = np.asarray(targets)
        target_rows = targets[: shard * batch_size].reshape(batch_size, shard)
    n_windows = rows.shape[1] // n_s
    for w in range(n_windows):
        sl = slice(w * n_s, (w + 1) * n_s)
        yield rows[:, sl], target_rows[:, sl]


def count_windows(n_tokens, batch_size, n_s):
    return (n_tokens // batch_size - 1) // n_s


# -- synthetic long-range recall ---------------------------------------------

@dataclass(frozen=True)
class SyntheticTaskSpec:
    distance: int
    seq_len: int
    n_episodes: int = 1000
    n_payloads: int = 8
    n_cues: int = 8
    n_fillers: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.distance < 0 or self.distance + 3 > self.seq_len:
            raise DataError(f"distance {self.distance} does not fit in episodes of {self.seq_len}")
        if min(self.n_payloads, self.n_cues, self.n_fillers) < 1:
            raise DataError("every token class needs at least one symbol")

    @property
    def vocab_size(self):
        return self.n_payloads + self.n_cues + self.n_fillers

    @property
    def chance(self):
        return 1.0 / self.n_payloads


@dataclass
class Episode:
    tokens: np.ndarray
    targets: np.ndarray
    cue: int
    payload: int
    cue_pos: int
    payload_pos: int
    query_pos: int


def synthetic_recall(spec):
    """Episodes of ``[fillers..., cue, payload, D fillers, cue]``.

    The only scored target is at the final (query) position, where the
    model must emit the payload seen ``D + 1`` tokens earlier. Token ids:
    payloads first, then cues, then fillers; other targets are -1.
    """
    rng = np.random.default_rng(spec.seed)
    cue_base = spec.n_payloads
    filler_base = spec.n_payloads + spec.n_cues
    query = spec.seq_len - 1
    payload_pos = query - spec.distance - 1
    cue_pos = payload_pos - 1
    episodes = []
    for _ in range(spec.n_episodes):
        tokens = filler_base + rng.integers(0, spec.n_fillers, spec.seq_len)
        cue = cue_base + int(rng.integers(spec.n_cues))
        payload = int(rng.integers(spec.n_payloads))
        tokens[cue_pos] = cue
        tokens[payload_pos] = payload
        tokens[query] = cue
        targets = np.full(spec.seq_len, -1, dtype=np.int64)
        targets[query] = payload
        episodes.append(Episode(tokens.astype(np.int64), targets, cue, payload,
                                cue_pos, payload_pos, query))
    return episodes


def episodes_to_stream(episodes, lead=0, filler=None):
    """Concatenate episodes into aligned token and target streams.

    ``lead`` filler tokens are prepended so episode boundaries can be shifted
    relative to window boundaries.
    """
    if filler is None:
        filler = int(episodes[0].tokens[0]) if episodes else 0
    tokens = [np.full(lead, filler, dtype=np.int64)] + [e.tokens for e in episodes]
    targets = [np.full(lead, -1, dtype=np.int64)] + [e.targets for e in episodes]
    return np.concatenate(tokens), np.concatenate(targets)


def recall_distance_window(n_m, n_cm, c):
    """Query-to-payload distances reachable only through the compressed memory: ``(n_m, n_m + c * n_cm]``."""
    return n_m + 1, n_m + c * n_cm
