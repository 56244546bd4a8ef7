import math

import numpy as np
import pytest

from rescue_tom.neural import (AMSGradConfig, AreaTransformer, ModelParams, NonFiniteGradient,
                               Tensor, TrainConfig, TrainingDiverged, TriageRNN, causal_mask,
                               cross_entropy, cross_entropy_np, decay_hidden, load_checkpoint,
                               lstm_step, make_transformer, make_triage_model, ode_evolve,
                               optimizer_step, params_hash, save_checkpoint, train)
from rescue_tom.neural.train import area_windows, checkpoint_bytes
from rescue_tom.trajectory import TriageSequence, to_area_sequence, to_triage_sequence

from gradcheck import CASES, check, run_case


def toy_sequence(n=6, label="selective", seed=0):
    rng = np.random.default_rng(seed)
    return TriageSequence(np.cumsum(rng.uniform(1, 30, n)), rng.uniform(0, 50, (n, 2)),
                          rng.integers(0, 2, n), ("VictimSeen",) * n, tuple(range(n)), (label,) * n)


# ---------------------------------------------------------------- gradients

@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("case", sorted(CASES))
def test_gradient_check(case, seed):
    err, tol = run_case(case, seed)
    assert err <= tol, (case, seed, err)


@pytest.mark.parametrize("variant", ["time2vec", "decay", "ode"])
def test_full_model_gradient(variant):
    m = TriageRNN(variant, hidden=4, t2v_dim=2, seed=3)
    seq = toy_sequence(4)
    names = m.params.names()

    def fn(*ts):
        for k, t in zip(names, ts):
            m.params.tensors[k] = t
        return cross_entropy(m.forward(seq), seq.label_ids())
    arrays = [m.params[k].data.copy() for k in names]
    assert check(fn, arrays, max_coords=10) <= (1e-3 if variant == "ode" else 1e-6)


# ---------------------------------------------------------------- cells

def test_lstm_zero_weights_zero_state():
    W, b = Tensor(np.zeros((3 + 4, 16))), Tensor(np.zeros(16))
    h, c = lstm_step(np.ones(3), np.zeros(4), np.zeros(4), W, b)
    assert np.all(h.data == 0) and np.all(c.data == 0)


def test_lstm_cell_growth_bounded():
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = rng.normal(size=4) * 3
        W, b = Tensor(rng.normal(size=(7, 16)) * 3), Tensor(rng.normal(size=16))
        _, c2 = lstm_step(rng.normal(size=3), rng.normal(size=4), c, W, b)
        assert np.all(np.abs(c2.data) <= np.abs(c) + 1 + 1e-12)


def test_lstm_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        lstm_step(np.ones(3), np.zeros(4), np.zeros(4), Tensor(np.zeros((6, 16))), Tensor(np.zeros(16)))


def test_decay_values():
    h = np.array([1.0, -2.0])
    assert np.array_equal(decay_hidden(h, 0.0), h)
    assert np.allclose(decay_hidden(h, 60.0), h / 2)
    assert np.allclose(decay_hidden(h, 120.0), h / 4)
    assert np.allclose(decay_hidden(decay_hidden(h, 17.0), 33.0), decay_hidden(h, 50.0), atol=1e-15)
    with pytest.raises(ValueError):
        decay_hidden(h, -1.0)


def _ode_weights(seed, scale=0.3, H=6):
    rng = np.random.default_rng(seed)
    return [Tensor(rng.uniform(-scale, scale, s)) for s in ((H, H), (H,), (H, H), (H,))]


def test_ode_zero_field_identity():
    h = Tensor(np.arange(6.0))
    z = [Tensor(np.zeros(s)) for s in ((6, 6), (6,), (6, 6), (6,))]
    assert np.array_equal(ode_evolve(h, 2.5, *z).data, h.data)
    assert ode_evolve(h, 0.0, *_ode_weights(0)) is h


def test_ode_euler_converges_first_order():
    w = _ode_weights(1, 0.5)
    h = Tensor(np.random.default_rng(1).normal(size=6))
    ref = ode_evolve(h, 2.0, *w, steps=4096).data
    errs = [np.abs(ode_evolve(h, 2.0, *w, steps=s).data - ref).max() for s in (8, 16, 32)]
    assert 1.6 < errs[0] / errs[1] < 2.4 and 1.6 < errs[1] / errs[2] < 2.4


def test_ode_rejects_bad_arguments():
    h = Tensor(np.zeros(6))
    with pytest.raises(ValueError):
        ode_evolve(h, -1.0, *_ode_weights(0))
    with pytest.raises(ValueError):
        ode_evolve(h, 1.0, *_ode_weights(0), steps=0)


def test_ode_overflow_raises():
    H = 6
    w = [Tensor(np.zeros((H, H))), Tensor(np.zeros(H)), Tensor(np.zeros((H, H))), Tensor(np.full(H, 1e307))]
    with pytest.raises(FloatingPointError), np.errstate(over="ignore"):
        ode_evolve(Tensor(np.full(H, 1e308)), 10.0, *w, steps=1)


# ---------------------------------------------------------------- model outputs

@pytest.mark.parametrize("variant", ["time2vec", "decay", "ode"])
def test_rnn_probabilities(variant):
    m = TriageRNN(variant, seed=2)
    p = m.predict_proba(toy_sequence(7))
    assert p.shape == (7, 2) and np.allclose(p.sum(axis=1), 1.0)


def test_zero_head_gives_half():
    m = TriageRNN("decay", zero_head=True)
    assert np.array_equal(m.predict_proba(toy_sequence(3)), np.full((3, 2), 0.5))
    assert list(m.predict(toy_sequence(3))) == [0, 0, 0]


def test_rnn_rejects_empty_and_unknown():
    with pytest.raises(ValueError):
        TriageRNN("gru")
    empty = TriageSequence(np.zeros(0), np.zeros((0, 2)), np.zeros(0, int), (), (), ())
    with pytest.raises(ValueError):
        TriageRNN().forward(empty)


def test_rnn_is_causal():
    m = TriageRNN("time2vec", seed=4)
    full = toy_sequence(8)
    head = TriageSequence(full.t[:5], full.xy[:5], full.severity[:5], full.kinds[:5],
                          full.victims[:5], full.labels[:5])
    assert np.allclose(m.predict_proba(full)[:5], m.predict_proba(head))


def test_transformer_shape_and_count():
    m = AreaTransformer()
    assert m.forward([0, 3, 7, 9, 1]).shape == (5, 26)
    assert m.params.count() == 8102


def test_transformer_causal():
    m = AreaTransformer(seed=5)
    a = m.forward([4, 2, 9, 11, 3]).data
    b = m.forward([4, 2, 9, 20, 17]).data
    assert np.allclose(a[:3], b[:3]) and not np.allclose(a[3:], b[3:])
    assert np.allclose(m.forward([4, 2, 9]).data, a[:3])


def test_transformer_rejects_bad_windows():
    m = AreaTransformer()
    for ids in ([], list(range(6)), [26], [[1, 2]]):
        with pytest.raises(ValueError):
            m.forward(ids)


def test_causal_mask():
    m = causal_mask(4)
    assert np.all(m[np.tril_indices(4)] == 0) and np.all(m[np.triu_indices(4, 1)] <= -1e9)


def test_cross_entropy_uniform_and_analytic():
    z = np.zeros(26)
    assert cross_entropy(Tensor(z), 3).item() == pytest.approx(math.log(26), abs=1e-12)
    rng = np.random.default_rng(0)
    z = rng.normal(size=26)
    loss, g = cross_entropy_np(z, 5)
    t = Tensor(z, requires_grad=True)
    ce = cross_entropy(t, 5)
    ce.backward()
    assert ce.item() == pytest.approx(loss, abs=1e-12) and np.allclose(t.grad, g, atol=1e-12)
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ValueError):
        cross_entropy_np(z, 26)


def test_softmax_sums_to_one_with_large_logits():
    p = Tensor(np.array([[1000.0, 0.0, -1000.0], [5.0, 5.0, 5.0]])).softmax(axis=-1).data
    assert np.all(np.isfinite(p)) and np.allclose(p.sum(axis=1), 1.0)


# ---------------------------------------------------------------- optimizer

def _params(seed=0):
    p = ModelParams()
    p.add("w", np.random.default_rng(seed).normal(size=(3, 2)))
    return p


def test_amsgrad_zero_gradient_fixed_point():
    p = _params()
    w0 = p["w"].data.copy()
    for _ in range(5):
        optimizer_step(p, {"w": np.zeros((3, 2))}, AMSGradConfig(weight_decay=0.0))
    assert np.array_equal(p["w"].data, w0)


def test_amsgrad_constant_gradient_step_is_lr():
    p = _params()
    cfg = AMSGradConfig(learning_rate=1e-2, weight_decay=0.0)
    prev = p["w"].data.copy()
    for _ in range(50):
        optimizer_step(p, {"w": np.full((3, 2), 0.7)}, cfg)
        step = prev - p["w"].data
        prev = p["w"].data.copy()
    assert np.allclose(step, 1e-2, rtol=1e-5)


def test_amsgrad_vmax_monotone():
    p = _params()
    rng = np.random.default_rng(1)
    last = np.zeros((3, 2))
    for _ in range(40):
        optimizer_step(p, {"w": rng.normal(size=(3, 2)) * rng.uniform(0, 3)})
        assert np.all(p.state["w"]["vmax"] >= last)
        last = p.state["w"]["vmax"].copy()


def test_amsgrad_rejects_non_finite_without_moving():
    p = _params()
    w0 = p["w"].data.copy()
    g = np.zeros((3, 2))
    g[1, 1] = np.nan
    with pytest.raises(NonFiniteGradient):
        optimizer_step(p, {"w": g})
    assert np.array_equal(p["w"].data, w0) and p.step == 0


def test_weight_decay_shrinks():
    p = _params()
    w0 = p["w"].data.copy()
    optimizer_step(p, {"w": np.zeros((3, 2))}, AMSGradConfig(learning_rate=0.1, weight_decay=0.5))
    assert np.allclose(p["w"].data, w0 * 0.95)


# ---------------------------------------------------------------- training

def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=4)
    with pytest.raises(ValueError):
        TrainConfig.from_doc({"lr": 1.0})
    assert TrainConfig.from_doc({"epochs": 3}).epochs == 3


def test_area_windows():
    w = area_windows([1, 2, 3, 4, 5, 6, 7], 5)
    assert [(list(x), list(y)) for x, y in w] == [([1, 2, 3, 4, 5], [2, 3, 4, 5, 6]), ([6], [7])]


@pytest.fixture
def area_data(small_dataset):
    return [to_area_sequence(tr) for tr in small_dataset[:20]]


def test_transformer_loss_decreases(area_data):
    cfg = TrainConfig(epochs=10, seed=1, learning_rate=1e-3)
    res = train(make_transformer(cfg), area_data[:6], cfg)
    assert res.losses[-1] < res.losses[0]


def test_training_deterministic(area_data):
    cfg = TrainConfig(epochs=2, seed=4)
    a = train(make_transformer(cfg), area_data[:3], cfg).model
    b = train(make_transformer(cfg), area_data[:3], cfg).model
    assert params_hash(a) == params_hash(b)


def test_rnn_memorizes_constant_label():
    seqs = [toy_sequence(5, "opportunistic", seed=s) for s in range(6)]
    cfg = TrainConfig(epochs=30, learning_rate=1e-2, seed=0)
    res = train(make_triage_model("decay", cfg), seqs, cfg)
    acc = np.mean([np.mean(res.model.predict(s) == 1) for s in seqs])
    assert acc >= 0.99


def test_checkpoint_round_trip(tmp_path, small_dataset):
    cfg = TrainConfig(epochs=1, seed=2)
    seqs = [to_triage_sequence(tr) for tr in small_dataset[:2]]
    m = train(make_triage_model("ode", cfg), seqs, cfg).model
    path = tmp_path / "m.npz"
    save_checkpoint(path, m, cfg, {"note": "x"})
    m2, cfg2, header = load_checkpoint(path)
    assert cfg2 == cfg and header["extra"] == {"note": "x"}
    assert params_hash(m2) == params_hash(m)
    assert checkpoint_bytes(m2, cfg2, {"note": "x"}) == path.read_bytes()
    assert np.array_equal(m2.predict_proba(seqs[0]), m.predict_proba(seqs[0]))


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.npz"
    np.savez(p, a=np.zeros(2))
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_divergence_raises():
    seqs = [toy_sequence(4, seed=s) for s in range(2)]
    cfg = TrainConfig(epochs=2)
    m = make_triage_model("decay", cfg)
    m.params["head.W"].data[:] = np.inf
    with pytest.raises(TrainingDiverged) as ei, np.errstate(invalid="ignore"):
        train(m, seqs, cfg)
    assert ei.value.losses == []
