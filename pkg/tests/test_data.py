import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compressive.data import (
    UNK,
    SyntheticTaskSpec,
    Vocabulary,
    contiguous_batches,
    count_windows,
    detokenize,
    episodes_to_stream,
    frequency_table,
    read_corpus,
    recall_distance_window,
    split_corpus,
    split_words,
    synthetic_recall,
    tokenize,
)
from compressive.errors import DataError, DegenerateInputError
from compressive.experiments import recall_batches


@settings(max_examples=100)
@given(st.text(max_size=60))
def test_char_tokenization_round_trips(text):
    stream = tokenize(text, "char")
    assert detokenize(stream) == text
    assert stream.ids.max(initial=0) < 256


def test_invalid_utf8_is_rejected():
    with pytest.raises(DataError):
        tokenize(b"\xff\xfe", "char")


def test_word_tokenization_and_unknowns():
    assert split_words("Hello, world!  It's") == ["Hello", ",", "world", "!", "It", "'", "s"]
    train = tokenize("a b a c", "word")
    assert train.vocab.itos[0] == UNK
    test = tokenize("a d", "word", vocab=train.vocab)
    assert test.surfaces() == ["a", UNK]
    assert frequency_table(train) == {"a": 2, "b": 1, "c": 1}
    assert frequency_table("x x y") == {"x": 2, "y": 1}


def test_byte_vocabulary_and_bad_kind():
    assert len(Vocabulary.bytes()) == 256
    with pytest.raises(ValueError):
        tokenize("abc", "bpe")


def test_read_and_split_corpus(tmp_path):
    with pytest.raises(DataError):
        read_corpus(tmp_path / "missing.txt")
    (tmp_path / "c.txt").write_text("x" * 100)
    train, valid, test = split_corpus(read_corpus(tmp_path / "c.txt"))
    assert (len(train), len(valid), len(test)) == (90, 5, 5)


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 40))
def test_contiguous_batches_walk_each_shard(batch, n_s, extra):
    ids = np.arange(batch * (n_s + 1) + extra)
    out = list(contiguous_batches(ids, batch, n_s))
    shard = len(ids) // batch
    assert len(out) == count_windows(len(ids), batch, n_s)
    for w, (x, y) in enumerate(out):
        assert x.shape == y.shape == (batch, n_s)
        for b in range(batch):
            start = b * shard + w * n_s
            np.testing.assert_array_equal(x[b], ids[start:start + n_s])
            np.testing.assert_array_equal(y[b], ids[start + 1:start + n_s + 1])


def test_contiguous_batches_reject_short_streams():
    with pytest.raises(DegenerateInputError):
        list(contiguous_batches(np.arange(5), 2, 4))


def test_synthetic_recall_layout():
    spec = SyntheticTaskSpec(distance=40, seq_len=64, n_episodes=20, seed=3)
    for ep in synthetic_recall(spec):
        assert ep.query_pos == 63 and ep.query_pos - ep.payload_pos == 41
        assert ep.tokens[ep.cue_pos] == ep.tokens[ep.query_pos] == ep.cue
        assert ep.tokens[ep.payload_pos] == ep.payload < spec.n_payloads
        assert (ep.targets != -1).sum() == 1 and ep.targets[ep.query_pos] == ep.payload
        others = np.delete(ep.tokens, [ep.cue_pos, ep.payload_pos, ep.query_pos])
        assert np.all(others >= spec.n_payloads + spec.n_cues)
    assert spec.chance == 1 / 8 and spec.vocab_size == 32


def test_synthetic_recall_validation():
    with pytest.raises(DataError):
        SyntheticTaskSpec(distance=70, seq_len=64)
    with pytest.raises(DataError):
        SyntheticTaskSpec(distance=4, seq_len=64, n_payloads=0)


def test_recall_distance_window():
    assert recall_distance_window(16, 16, 3) == (17, 64)


def test_episode_stream_and_aligned_batches():
    spec = SyntheticTaskSpec(distance=40, seq_len=64, n_episodes=3)
    tokens, targets = episodes_to_stream(synthetic_recall(spec), lead=1)
    assert len(tokens) == 193 and targets[0] == -1
    assert list(np.nonzero(targets != -1)[0]) == [64, 128, 192]
    batches = recall_batches(spec, 3, 16, lead=1, seed=0)
    first = [next(batches) for _ in range(9)]
    for w, (x, y) in enumerate(first):
        scored = np.argwhere(y != -1)
        if w in (4, 8):
            assert sorted(scored[:, 0]) == [0, 1, 2] and set(scored[:, 1]) == {0}
        else:
            assert scored.size == 0
    # rows are independent episode streams
    assert not np.array_equal(first[1][0][0], first[1][0][1])
