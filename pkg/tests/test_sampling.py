import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compressive.compression import CompressionSpec
from compressive.errors import ConfigError
from compressive.model import CompressiveTransformer, ModelConfig
from compressive.sampling import generate, nucleus_candidates, sample_nucleus

from oracles import nucleus_oracle


def test_worked_example():
    assert sorted(nucleus_candidates([0.5, 0.3, 0.2], 0.7)) == [0, 1]


@settings(max_examples=200)
@given(st.integers(1, 20), st.sampled_from([0.1, 0.5, 0.98, 1.0]), st.integers(0, 10_000))
def test_candidates_match_enumeration_oracle(v, p, seed):
    probs = np.random.default_rng(seed).dirichlet(np.ones(v))
    assert list(nucleus_candidates(probs, p)) == nucleus_oracle(probs, p)


def test_tiny_p_is_greedy_and_full_p_keeps_support():
    probs = np.array([0.1, 0.6, 0.3])
    assert list(nucleus_candidates(probs, 1e-9)) == [1]
    rng = np.random.default_rng(0)
    assert {sample_nucleus(probs, 1e-9, rng) for _ in range(50)} == {1}
    assert sorted(nucleus_candidates(probs, 1.0)) == [0, 1, 2]


def test_sampling_frequencies_follow_renormalised_nucleus():
    probs = np.array([0.5, 0.3, 0.2])
    rng = np.random.default_rng(1)
    draws = np.array([sample_nucleus(probs, 0.7, rng) for _ in range(4000)])
    assert not np.any(draws == 2)
    assert np.mean(draws == 0) == pytest.approx(0.625, abs=0.03)


@pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
def test_p_out_of_range(p):
    with pytest.raises(ConfigError):
        nucleus_candidates([1.0], p)


def test_generate_is_seeded_and_sized():
    cfg = ModelConfig(n_layers=1, d_model=8, n_heads=2, n_s=4, n_m=4, n_cm=2, vocab_size=9,
                      compression=CompressionSpec(variant="mean_pool", rate=2))
    model = CompressiveTransformer(cfg, seed=0)
    a = generate(model, [1, 2, 3, 4, 5], 11, p=0.9, rng=np.random.default_rng(3))
    b = generate(model, [1, 2, 3, 4, 5], 11, p=0.9, rng=np.random.default_rng(3))
    assert a == b and len(a) == 11 and all(0 <= t < 9 for t in a)
    with pytest.raises(ConfigError):
        generate(model, [1], 2, p=2.0)
