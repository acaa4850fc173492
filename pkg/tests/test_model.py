import numpy as np
import pytest

from compressive import autograd as ag
from compressive.compression import CompressionSpec
from compressive.errors import ConfigError, DataError
from compressive.model import CompressiveTransformer, ModelConfig, sequence_loss

from oracles import numeric_grad, rel_error


def tiny(objective="attention_reconstruction", variant="conv", seed=0, **overrides):
    cfg = dict(n_layers=2, d_model=8, n_heads=2, n_s=4, n_m=4, n_cm=2, vocab_size=11,
               compression=CompressionSpec(variant=variant, rate=2, objective=objective))
    cfg.update(overrides)
    with ag.precision("double"):
        return CompressiveTransformer(ModelConfig(**cfg), seed=seed)


def windows(n, batch=2, seed=0, vocab=11, n_s=4):
    rng = np.random.default_rng(seed)
    return [(rng.integers(0, vocab, (batch, n_s)), rng.integers(0, vocab, (batch, n_s)))
            for _ in range(n)]


def warm_state(model, batch=2, n=2, seed=9):
    state = model.init_state(batch)
    with ag.no_grad():
        for x, _ in windows(n, batch, seed):
            state = model.forward(x, state, mode="eval").state
    return state


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=10, n_heads=3)
    with pytest.raises(ConfigError):
        ModelConfig(n_s=8, n_m=4)
    with pytest.raises(ConfigError):
        ModelConfig(n_s=2, n_m=4, compression=CompressionSpec(rate=3))
    with pytest.raises(ConfigError):
        ModelConfig(dropout=1.0)


def test_forward_shapes_and_state_progress():
    model = tiny()
    state = model.init_state(2)
    (x, y), = windows(1)
    out = model.forward(x, state, targets=y)
    assert out.logits.shape == (2, 4, 11)
    assert out.token_losses.shape == (2, 4)
    assert out.state.steps == 1 and out.state.mem[0].shape == (2, 4, 8)
    assert len(out.aux_losses) == 2


def test_forward_leaves_input_state_untouched():
    model = tiny(variant="most_used")
    state = warm_state(model)
    before = state.snapshot()
    (x, y), = windows(1)
    model.forward(x, state, targets=y)
    for a, b in zip(state.usage + [m.data for m in state.mem],
                    before.usage + [m.data for m in before.mem]):
        np.testing.assert_array_equal(a, b)


def test_partial_window_needs_update_false():
    model = tiny()
    state = model.init_state(1)
    with pytest.raises(DataError):
        model.forward(np.array([1, 2]), state)
    out = model.forward(np.array([1, 2]), state, update=False)
    assert out.state is None and out.logits.shape == (1, 2, 11)


def test_out_of_range_tokens_rejected():
    model = tiny()
    with pytest.raises(DataError):
        model.forward(np.array([[0, 1, 2, 11]]), model.init_state(1))


def test_prefix_outputs_do_not_depend_on_later_tokens():
    model = tiny()
    state = warm_state(model, batch=1)
    a = model.forward(np.array([[1, 2, 3, 4]]), state, mode="eval").logits.data
    b = model.forward(np.array([[1, 2, 3, 9]]), state, mode="eval").logits.data
    np.testing.assert_allclose(a[0, :3], b[0, :3], atol=1e-13)


def test_sequence_loss_reductions():
    with ag.precision("double"):
        from compressive.autograd import Tensor

        logits = Tensor(np.random.default_rng(0).normal(size=(1, 3, 5)))
    targets = np.array([[1, -1, 4]])
    per = sequence_loss(logits, targets, reduction="none").data
    assert sequence_loss(logits, targets, reduction="sum").item() == pytest.approx(per.sum())
    assert sequence_loss(logits, targets).item() == pytest.approx(per.sum() / 2)


def _task_and_aux(model, state):
    (x1, y1), (x2, y2) = windows(2, seed=4)
    out1 = model.forward(x1, state, targets=y1)
    out2 = model.forward(x2, out1.state, targets=y2)
    task = (out1.loss + out2.loss) * 0.5
    aux = None if out1.aux_total is None else out1.aux_total + out2.aux_total
    return task, aux


def _grads(params):
    return {k: (None if p.grad is None else p.grad.copy()) for k, p in params.items()}


def _zero(params):
    for p in params.values():
        p.grad = None


def _is_zero(g):
    return g is None or not np.any(g)


@pytest.mark.parametrize("objective", ["attention_reconstruction", "auto_encoding"])
def test_task_and_aux_gradients_are_isolated(objective):
    model = tiny(objective=objective)
    state = warm_state(model)
    task, aux = _task_and_aux(model, state)
    ag.backward(task)
    assert all(_is_zero(g) for g in _grads(model.compression_parameters()).values())
    assert any(not _is_zero(g) for g in _grads(model.transformer_parameters()).values())
    _zero(model.parameters())
    ag.backward(aux)
    assert all(_is_zero(g) for g in _grads(model.transformer_parameters()).values())
    assert any(not _is_zero(g) for g in _grads(model.compression_parameters()).values())


def test_bptt_unroll_sends_task_gradient_into_compressor():
    model = tiny(objective="bptt")
    state = warm_state(model)
    task, aux = _task_and_aux(model, state)
    assert aux is None
    ag.backward(task)
    grads = _grads(model.compression_parameters())
    assert grads and all(not _is_zero(g) for g in grads.values())


def test_bptt_is_measured_in_eval_mode():
    model = tiny(objective="bptt")
    (x, y), = windows(1)
    assert not model.forward(x, warm_state(model), targets=y).aux_losses
    assert len(model.forward(x, warm_state(model), targets=y, mode="eval").aux_losses) == 2


def test_task_gradient_matches_finite_differences_through_memory():
    model = tiny(objective="bptt", variant="conv")
    rng = np.random.default_rng(1)
    for p in model.parameters().values():
        p.data = p.data + 0.05 * rng.normal(size=p.shape)
    start = warm_state(model)
    batches = windows(2, seed=7)

    def loss():
        state = start
        total = None
        for x, y in batches:
            out = model.forward(x, state, targets=y, detach_memory=False)
            state = out.state
            total = out.loss if total is None else total + out.loss
        return total

    ag.backward(loss())
    params = model.parameters()
    names = ["embedding", "layers.0.attn.r", "layers.1.attn.u", "layers.0.mlp_w1",
             "layers.1.ln2_gain", "compression.0.conv", "compression.1.conv"]
    with ag.no_grad():
        numeric = numeric_grad(lambda: loss().item(), [params[n].data for n in names])
    for name, g in zip(names, numeric):
        assert rel_error(params[name].grad, g) < 1e-4, name


def test_with_memory_shares_parameters():
    model = tiny()
    view = model.with_memory(n_m=8, n_cm=0)
    assert view.embedding is model.embedding and view.config.n_m == 8
    assert view.init_state(1).n_cm == 0
    assert model.config.n_m == 4


def test_parameter_roundtrip_and_validation():
    a, b = tiny(seed=0), tiny(seed=1)
    b.load_parameters({k: v.data for k, v in a.parameters().items()})
    for k, v in a.parameters().items():
        np.testing.assert_array_equal(v.data, b.parameters()[k].data)
    with pytest.raises(ConfigError):
        b.load_parameters({})
    counts = a.parameter_count()
    assert counts["compression"] == 2 * 2 * 8 * 8


def test_dropout_only_in_train_mode():
    model = tiny(dropout=0.5)
    (x, y), = windows(1)
    state = model.init_state(2)
    e1 = model.forward(x, state, mode="eval").logits.data
    e2 = model.forward(x, state, mode="eval").logits.data
    np.testing.assert_array_equal(e1, e2)
    t1 = model.forward(x, state).logits.data
    assert not np.allclose(t1, e1)
