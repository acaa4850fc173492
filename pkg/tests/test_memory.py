import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compressive import autograd as ag
from compressive.autograd import Tensor
from compressive.errors import ConfigError
from compressive.memory import (
    attention_cost,
    init_state,
    range_report,
    temporal_range,
    update_memories,
)

from oracles import ListMemory


def _mean_compress(c):
    def compress(layer, rows, usage):
        b, n, d = rows.shape
        k = n // c
        return ag.reshape(rows[:, : k * c], (b, k, c, d)).mean(axis=2)
    return compress


def _strided_compress(c):
    # exact selection keeps the comparison about slicing, not arithmetic
    def compress(layer, rows, usage):
        k = rows.shape[1] // c
        return rows[:, : k * c: c]
    return compress


def run_against_simulator(n_layers, n_s, n_m, n_cm, c, steps, seed):
    rng = np.random.default_rng(seed)
    d, batch = 3, 2
    with ag.precision("double"):
        state = init_state(n_layers, n_m, n_cm, d, batch)
        sims = [[ListMemory(n_m, n_cm, d) for _ in range(batch)] for _ in range(n_layers)]
        compress = _strided_compress(c)
        for _ in range(steps):
            hidden = [Tensor(rng.normal(size=(batch, n_s, d))) for _ in range(n_layers)]
            state, old, new = update_memories(state, hidden, compress)
            for i in range(n_layers):
                for b in range(batch):
                    sim = sims[i][b]
                    ev, _ = sim.push(list(hidden[i].data[b]), lambda x: x[: (len(x) // c) * c: c])
                    assert np.array_equal(state.mem[i].data[b], np.array(sim.mem).reshape(n_m, d))
                    assert np.array_equal(state.cmem[i].data[b], np.array(sim.cmem).reshape(n_cm, d))
                    assert np.array_equal(old[i].data[b], ev)
    return state


def test_cold_start_memory_is_zero_and_shaped():
    state = init_state(2, 5, 3, 4, batch=2)
    assert state.mem[0].shape == (2, 5, 4) and state.cmem[1].shape == (2, 3, 4)
    assert all(np.all(m.data == 0) for m in state.mem + state.cmem)
    assert state.mem_fill == state.cmem_fill == 0


@pytest.mark.parametrize("n_s,n_m,n_cm,c", [(4, 4, 2, 2), (3, 6, 4, 3), (4, 8, 0, 2), (2, 5, 3, 1)])
def test_fifo_matches_list_simulator(n_s, n_m, n_cm, c):
    state = run_against_simulator(2, n_s, n_m, n_cm, c, steps=12, seed=n_s + n_m)
    assert state.steps == 12 and state.mem_fill == n_m


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 4), st.integers(0, 5), st.integers(1, 3), st.integers(0, 99))
def test_fifo_property_random_configs(n_s, extra_m, n_cm, c, seed):
    if n_cm and n_s < c:
        c = n_s
    run_against_simulator(1, n_s, n_s + extra_m, n_cm, c, steps=6, seed=seed)


def test_fill_counters_track_real_content():
    with ag.precision("double"):
        state = init_state(1, 4, 4, 2)
        compress = _mean_compress(2)
        fills = []
        for _ in range(4):
            state, _, _ = update_memories(state, [Tensor(np.ones((1, 2, 2)))], compress)
            fills.append((state.mem_fill, state.cmem_fill))
    assert fills == [(2, 0), (4, 0), (4, 1), (4, 2)]


def test_window_longer_than_memory_is_rejected():
    state = init_state(1, 2, 2, 2)
    with pytest.raises(ConfigError):
        update_memories(state, [Tensor(np.ones((1, 3, 2)))], _mean_compress(1))


def test_detach_controls_graph_retention():
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    state = init_state(1, 2, 2, 2)
    kept, _, new = update_memories(state, [x * 2.0], _mean_compress(1), detach=False)
    assert kept.is_attached()
    cut, _, _ = update_memories(state, [x * 2.0], _mean_compress(1), detach=True)
    assert not cut.is_attached()
    assert not kept.detached().is_attached()


def test_usage_accumulates_and_resets_on_eviction():
    state = init_state(1, 4, 2, 2)
    weights = np.zeros((1, 2, 2, 2 + 4 + 2))
    weights[..., 2:6] = [0.1, 0.2, 0.3, 0.4]
    state.add_usage(0, weights)
    np.testing.assert_allclose(state.usage[0], [[0.1, 0.2, 0.3, 0.4]])
    new, _, _ = update_memories(state, [Tensor(np.ones((1, 2, 2)))], _mean_compress(2))
    np.testing.assert_allclose(new.usage[0], [[0.3, 0.4, 0.0, 0.0]])


def test_snapshot_is_independent():
    state = init_state(1, 2, 2, 2)
    snap = state.snapshot()
    state.mem[0].data += 1.0
    assert np.all(snap.mem[0].data == 0)


@settings(max_examples=60)
@given(st.integers(1, 12), st.integers(0, 600), st.integers(0, 600), st.integers(1, 8),
       st.integers(1, 600))
def test_range_and_cost_formulas(layers, n_m, n_cm, c, n_s):
    report = range_report(layers, n_m, n_cm, c, n_s)
    assert report.max_temporal_range == layers * (n_m + c * n_cm)
    assert report.attention_cost == n_s * (n_s + n_m + n_cm)
    assert temporal_range(layers, n_m, 0, c) == layers * n_m


def test_reference_range_example_doubles_at_equal_cost():
    ours = range_report(1, 512, 512, 3, 512)
    txl = range_report(1, 1024, 0, 3, 512)
    assert ours.max_temporal_range / txl.max_temporal_range == 2.0
    assert ours.attention_cost == txl.attention_cost == attention_cost(512, 1024, 0)
