from __future__ import annotations

import logging
import math
import zipfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twnids import synth
from twnids.errors import CheckpointError, ConfigError
from twnids.features import FeatureSet
from twnids.model import (
    AdamW,
    InputSlot,
    ModelSpec,
    TrainConfig,
    TWNet,
    accuracy,
    adamw_step,
    dump_activation_curves,
    load_checkpoint,
    parse_hidden,
    save_checkpoint,
    split_indices,
    train,
    twnet_spec,
)

from oracles import adamw_reference, central_difference, rel_err


def random_features(rng, n):
    x = np.abs(rng.normal(size=(n, 20))) * rng.choice([1, 10, 100], size=20)
    x[:, 11] = rng.choice([0, 0.5, 1], size=n)
    return x


def toy_set(rng, n=300, classes=6):
    return FeatureSet(random_features(rng, n), rng.integers(0, 3, n), rng.integers(0, classes, n))


def test_spec_validation():
    with pytest.raises(ConfigError):
        ModelSpec("x", (InputSlot(1),), hidden=(4,))
    with pytest.raises(ConfigError):
        ModelSpec("x", (InputSlot(1),), n_classes=1)
    with pytest.raises(ConfigError):
        InputSlot(21)
    with pytest.raises(ConfigError):
        InputSlot(1, "erf_scale", n=2)
    with pytest.raises(ConfigError):
        twnet_spec("TWNet9")


def test_classifier_only_variant():
    m = TWNet.build(twnet_spec("TWNet3", hidden=()), 0)
    assert all(len(layers) == 1 for layers in m.layers.values())
    assert m.layers["tcp"][0][0].shape == (18, 6)
    assert twnet_spec("TWNet3", hidden=()).label == "TWNet3{0}"


def test_twnet5_shape():
    spec = twnet_spec("TWNet5")
    assert (len(spec.inputs), spec.hidden, spec.n_classes) == (20, (32, 16), 6)
    m = TWNet.build(spec, 0)
    for layers in m.layers.values():
        assert [W.shape for W, _ in layers] == [(20, 32), (32, 16), (16, 6)]


@pytest.mark.parametrize("name,n_inputs", [("TWNet1", 7), ("TWNet2", 15), ("TWNet3", 18), ("TWNet4", 18), ("TWNet5", 20)])
def test_input_counts(name, n_inputs):
    assert len(twnet_spec(name).inputs) == n_inputs


def test_parse_hidden():
    assert parse_hidden("32,16") == (32, 16)
    assert parse_hidden("{32,32}") == (32, 32)
    assert parse_hidden("0") == ()


def test_spec_dict_round_trip():
    spec = twnet_spec("TWNet2", n_classes=4)
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_build_deterministic(rng):
    x = random_features(rng, 200)
    a = TWNet.build(twnet_spec("TWNet4"), 7, x).parameters()
    b = TWNet.build(twnet_spec("TWNet4"), 7, x).parameters()
    c = TWNet.build(twnet_spec("TWNet4"), 8, x).parameters()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


def test_fan_in_uniform_bounds():
    m = TWNet.build(twnet_spec("TWNet5"), 0)
    for layers in m.layers.values():
        for W, b in layers:
            bound = 1 / math.sqrt(W.shape[0])
            assert np.abs(W).max() <= bound and np.abs(b).max() <= bound


def test_data_init_places_knots(rng):
    x = random_features(rng, 500)
    m = TWNet.build(twnet_spec("TWNet5"), 0, x)
    assert m.activations[0].x0.tolist() == np.quantile(x[:, 0], [0.25, 0.5, 0.75]).tolist()
    two = TWNet.build(twnet_spec("TWNet2"), 0, x)
    # features 6-9 appear twice, at the 1/3 and 2/3 quantiles
    assert two.activations[5].x0[0] == np.quantile(x[:, 5], 1 / 3)
    assert two.activations[9].x0[0] == np.quantile(x[:, 5], 2 / 3)


def test_default_init_without_data():
    m = TWNet.build(twnet_spec("TWNet2"), 0)
    assert m.activations[0].k.tolist() == [1.0]
    assert m.activations[5].x0.tolist() == [0.0]


def test_forward_hand_sized_model():
    spec = ModelSpec("toy", (InputSlot(1), InputSlot(3, "erf_scale")), (), 2)
    m = TWNet.build(spec, 0)
    m.activations[1].k[:] = 0.5
    W = np.array([[1.0, -2.0], [0.5, 3.0]])
    b = np.array([0.1, -0.2])
    m.layers["udp"][0] = [W, b]
    x = np.zeros((1, 20))
    x[0, 0], x[0, 2] = 2.0, 1.2
    a = (2.0, math.erf(0.5 * 1.2))
    expected = [a[0] * 1.0 + a[1] * 0.5 + 0.1, a[0] * -2.0 + a[1] * 3.0 - 0.2]
    assert m.forward(x, np.array([1]))[0].tolist() == pytest.approx(expected, rel=1e-15)


def test_zero_activation_zero_bias_gives_zero_scores():
    spec = ModelSpec("toy", (InputSlot(1), InputSlot(2)), (3, 3), 4)
    m = TWNet.build(spec, 0)
    for layers in m.layers.values():
        for pair in layers:
            pair[1][:] = 0
    assert np.array_equal(m.forward(np.zeros((5, 20)), np.array([0, 1, 2, 0, 1])), np.zeros((5, 4)))


def test_dimension_mismatch():
    m = TWNet.build(twnet_spec("TWNet1"), 0)
    with pytest.raises(ValueError):
        m.forward(np.zeros((2, 19)), np.zeros(2, dtype=int))
    with pytest.raises(ValueError):
        m.forward(np.zeros((2, 20)), np.zeros(3, dtype=int))


def test_protocol_mask_matrix_equals_codes(rng):
    m = TWNet.build(twnet_spec("TWNet3"), 0)
    x = random_features(rng, 50)
    proto = rng.integers(0, 3, 50)
    assert np.array_equal(m.forward(x, proto), m.forward(x, np.eye(3)[proto]))


@settings(max_examples=25)
@given(seed=st.integers(0, 2**32 - 1), active=st.integers(0, 2))
def test_inactive_branches_do_not_matter(seed, active):
    r = np.random.default_rng(seed)
    m = TWNet.build(twnet_spec("TWNet4"), 0)
    x = random_features(r, 64)
    proto = np.full(64, active)
    before = m.forward(x, proto)
    for i, branch in enumerate(("tcp", "udp", "other")):
        if i != active:
            for pair in m.layers[branch]:
                pair[0] = r.normal(scale=1e3, size=pair[0].shape)
                pair[1] = r.normal(scale=1e3, size=pair[1].shape)
    assert np.array_equal(m.forward(x, proto), before)


def test_uniform_scores_loss_is_log_c(rng):
    m = TWNet.build(twnet_spec("TWNet3", hidden=()), 0)
    for layers in m.layers.values():
        layers[-1][0][:] = 0
        layers[-1][1][:] = 0
    loss, _ = m.loss_and_gradients(random_features(rng, 10), rng.integers(0, 3, 10), rng.integers(0, 6, 10))
    assert loss == pytest.approx(math.log(6), rel=1e-15)


def test_large_scores_stay_finite(rng):
    m = TWNet.build(twnet_spec("TWNet3", hidden=()), 0)
    for layers in m.layers.values():
        layers[-1][0][:] = 0
        layers[-1][1][:] = [1e4, -1e4, 0, 0, 0, 0]
    loss, grads = m.loss_and_gradients(random_features(rng, 4), np.zeros(4, int), np.array([1, 1, 0, 2]))
    assert math.isfinite(loss) and loss > 1e4
    assert all(np.all(np.isfinite(g)) for g in grads.values())


def test_duplicated_batch_same_loss_and_grads(rng):
    m = TWNet.build(twnet_spec("TWNet5", hidden=(4, 3)), 0, random_features(rng, 100))
    x, p, y = random_features(rng, 7), rng.integers(0, 3, 7), rng.integers(0, 6, 7)
    l1, g1 = m.loss_and_gradients(x, p, y)
    l2, g2 = m.loss_and_gradients(np.vstack([x, x]), np.concatenate([p, p]), np.concatenate([y, y]))
    assert l2 == pytest.approx(l1, rel=1e-13)
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], rtol=1e-10, atol=1e-15)


def test_label_out_of_range(rng):
    m = TWNet.build(twnet_spec("TWNet1"), 0)
    with pytest.raises(ValueError):
        m.loss_and_gradients(random_features(rng, 2), np.zeros(2, int), np.array([0, 6]))


@pytest.mark.parametrize("name", ["TWNet1", "TWNet2", "TWNet3", "TWNet4", "TWNet5"])
def test_gradients_match_finite_differences(rng, name):
    x = random_features(rng, 3)
    proto, y = np.array([0, 1, 2]), np.array([0, 3, 5])
    m = TWNet.build(twnet_spec(name, hidden=(3, 2)), 1, random_features(rng, 50))
    _, grads = m.loss_and_gradients(x, proto, y, localize=False)
    loss = lambda: m.loss_and_gradients(x, proto, y)[0]  # noqa: E731
    for k, p in m.parameters().items():
        for i in range(p.size):
            assert rel_err(grads[k].flat[i], central_difference(loss, p, i)) < 1e-4, (k, i)


def test_localized_gradient_keeps_one_unit(rng):
    m = TWNet.build(twnet_spec("TWNet5"), 0, random_features(rng, 100))
    x, p, y = random_features(rng, 32), rng.integers(0, 3, 32), rng.integers(0, 6, 32)
    _, full = m.loss_and_gradients(x, p, y, localize=False)
    _, local = m.loss_and_gradients(x, p, y)
    for j, a in enumerate(m.activations):
        names = [f"act{j}.{n}" for n in a.params]
        if a.n > 1:
            keep = int(np.argmin(np.abs(full[f"act{j}.x0"])))
            for n in names:
                assert np.flatnonzero(local[n]).tolist() in ([keep], [])
                assert local[n][keep] == full[n][keep]
        else:
            for n in names:
                assert np.array_equal(local[n], full[n])


# ---- optimizer ----------------------------------------------------------------------


def test_adamw_zero_grad_zero_decay_is_noop():
    p = {"a": np.array([1.0, -2.0])}
    state: dict = {}
    adamw_step(p, {"a": np.zeros(2)}, state, lr=0.1, weight_decay=0.0)
    assert p["a"].tolist() == [1.0, -2.0] and state["t"] == 1


def test_adamw_first_step_is_lr_sign():
    p = {"a": np.array([1.0, 1.0, 1.0])}
    adamw_step(p, {"a": np.array([3.0, -0.01, 250.0])}, {}, lr=1e-3, weight_decay=0.0)
    assert (p["a"] - 1.0) == pytest.approx([-1e-3, 1e-3, -1e-3], rel=1e-5)


def test_adamw_decay_is_decoupled():
    p = {"a": np.array([2.0])}
    adamw_step(p, {"a": np.zeros(1)}, {}, lr=0.1, weight_decay=0.5)
    assert p["a"][0] == 2.0 * (1 - 0.1 * 0.5)


def test_adamw_matches_reference_on_quadratic():
    a = np.array([1.0, 4.0, 0.25, 9.0])
    b = np.array([0.5, -1.0, 2.0, 0.0])
    grad = lambda th: (a * np.asarray(th) - b).tolist()  # noqa: E731
    start = [1.0, -2.0, 3.0, 0.5]
    reference = adamw_reference(start, grad, 10, lr=0.05, wd=0.1)
    p = {"theta": np.array(start)}
    state: dict = {}
    for t in range(10):
        adamw_step(p, {"theta": a * p["theta"] - b}, state, lr=0.05, weight_decay=0.1)
        np.testing.assert_allclose(p["theta"], reference[t], rtol=0, atol=1e-10)


def test_adamw_shape_mismatch():
    with pytest.raises(ValueError):
        adamw_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, {})


def test_adamw_sparse_entries_frozen():
    p = {"x0": np.array([1.0, 2.0])}
    state: dict = {}
    adamw_step(p, {"x0": np.array([0.5, 0.3])}, state, lr=0.1, sparse={"x0"})
    m_before = state["m"]["x0"].copy()
    v_before = state["v"]["x0"].copy()
    frozen = p["x0"][1]
    adamw_step(p, {"x0": np.array([0.4, 0.0])}, state, lr=0.1, sparse={"x0"})
    assert p["x0"][1] == frozen
    assert state["m"]["x0"][1] == m_before[1] and state["v"]["x0"][1] == v_before[1]
    assert p["x0"][0] != 1.0


def test_adamw_no_decay_names():
    p = {"w": np.array([3.0]), "act": np.array([3.0])}
    adamw_step(p, {"w": np.zeros(1), "act": np.zeros(1)}, {}, lr=0.1, weight_decay=0.5, no_decay={"act"})
    assert p["act"][0] == 3.0 and p["w"][0] < 3.0


# ---- training -----------------------------------------------------------------------


def test_zero_epochs_is_noop(rng):
    data = toy_set(rng)
    m = TWNet.build(twnet_spec("TWNet3"), 0, data.features)
    before = {k: v.copy() for k, v in m.parameters().items()}
    _, history = train(m, data, TrainConfig(epochs=0))
    assert history == []
    assert all(np.array_equal(before[k], v) for k, v in m.parameters().items())


def test_training_is_deterministic(rng):
    data = toy_set(rng)
    runs = []
    for _ in range(2):
        m = TWNet.build(twnet_spec("TWNet5", hidden=(8, 4)), 3, data.features)
        _, hist = train(m, data, TrainConfig(epochs=2, batch_size=64, seed=5), data)
        runs.append((m.parameters(), [(h.train_loss, h.train_acc, h.eval_acc) for h in hist]))
    (pa, ha), (pb, hb) = runs
    assert ha == hb
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_training_metrics_shape(rng):
    data = toy_set(rng)
    m = TWNet.build(twnet_spec("TWNet1"), 0, data.features)
    _, hist = train(m, data, TrainConfig(epochs=3, batch_size=100))
    assert [h.epoch for h in hist] == [1, 2, 3]
    assert all(math.isnan(h.eval_acc) for h in hist)
    assert all(h.wall_time >= 0 for h in hist)


def test_empty_dataset_rejected():
    m = TWNet.build(twnet_spec("TWNet1"), 0)
    with pytest.raises(ValueError):
        train(m, FeatureSet(np.zeros((0, 20)), np.zeros(0), np.zeros(0)))


def test_absent_class_warns(rng, caplog):
    data = toy_set(rng, classes=2)
    m = TWNet.build(twnet_spec("TWNet1"), 0)
    with caplog.at_level(logging.WARNING):
        train(m, data, TrainConfig(epochs=1))
    assert "DDoS" in caplog.text


def test_callback_runs_every_step(rng):
    data = toy_set(rng, n=250)
    steps = []
    train(TWNet.build(twnet_spec("TWNet1"), 0), data, TrainConfig(epochs=2, batch_size=100), callback=lambda t, m: steps.append(t))
    assert steps == [1, 2, 3, 4, 5, 6]


def test_split_indices():
    tr, va = split_indices(100, 4)
    assert len(tr) == 80 and len(va) == 20
    assert sorted(np.concatenate([tr, va]).tolist()) == list(range(100))
    assert np.array_equal(split_indices(100, 4)[0], tr)


def test_separable_two_class_classifier_only():
    data = synth.make_dataset(synth.separable_two_class(), 300.0, seed=11, classes=("Benign", "PortScan"))
    tr, _ = split_indices(len(data), 0)
    spec = twnet_spec("TWNet3", hidden=(), n_classes=2)
    m = TWNet.build(spec, 0, data.features[tr])
    train(m, data.subset(tr), TrainConfig(epochs=8, seed=0))
    assert accuracy(m, data.subset(tr)) >= 0.99


# ---- checkpoints ----------------------------------------------------------------------


def trained(rng):
    data = toy_set(rng)
    m = TWNet.build(twnet_spec("TWNet4", hidden=(8, 4)), 0, data.features)
    train(m, data, TrainConfig(epochs=1, batch_size=64))
    return m, data


def test_checkpoint_round_trip(tmp_path, rng):
    m, data = trained(rng)
    save_checkpoint(m, tmp_path / "c.npz", data.classes, 60.0, 0)
    ck = load_checkpoint(tmp_path / "c.npz")
    a, b = m.parameters(), ck.model.parameters()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) and a[k].dtype == b[k].dtype for k in a)
    assert ck.model.optimizer.t == m.optimizer.t
    for moment in ("m", "v"):
        for k, v in m.optimizer.state[moment].items():
            assert np.array_equal(ck.model.optimizer.state[moment][k], v)
    assert ck.classes == data.classes and ck.window_length == 60.0 and ck.seed == 0
    x = data.features[:20]
    assert np.array_equal(ck.model.forward(x, data.protocol[:20]), m.forward(x, data.protocol[:20]))


def test_checkpoint_bytes_reproducible(tmp_path, rng):
    m, data = trained(rng)
    save_checkpoint(m, tmp_path / "a.npz", data.classes, 60.0, 0)
    save_checkpoint(load_checkpoint(tmp_path / "a.npz").model, tmp_path / "b.npz", data.classes, 60.0, 0)
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()


def test_checkpoint_class_mismatch(tmp_path, rng):
    m, data = trained(rng)
    save_checkpoint(m, tmp_path / "c.npz", data.classes)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.npz", expected_classes=("Benign", "DoS"))


def test_checkpoint_version_mismatch(tmp_path, rng):
    m, data = trained(rng)
    save_checkpoint(m, tmp_path / "c.npz", data.classes)
    with zipfile.ZipFile(tmp_path / "c.npz") as src, zipfile.ZipFile(tmp_path / "d.npz", "w") as dst:
        for name in src.namelist():
            body = src.read(name)
            if name == "header.json":
                body = body.replace(b'"version": 1', b'"version": 99')
            dst.writestr(name, body)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "d.npz")
    (tmp_path / "junk.npz").write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.npz")


def test_checkpoint_records_default_window(tmp_path, rng):
    data = synth.make_dataset(synth.three_class(), 20.0, seed=0)
    m = TWNet.build(twnet_spec("TWNet1"), 0, data.features)
    save_checkpoint(m, tmp_path / "c.npz", data.classes, data.meta["window_length"], 0)
    assert load_checkpoint(tmp_path / "c.npz").window_length == 60


def test_copy_is_independent(rng):
    m, _ = trained(rng)
    clone = m.copy()
    clone.parameters()["tcp.W0"][:] = 0
    assert np.any(m.parameters()["tcp.W0"])
    assert clone.optimizer is not m.optimizer


def test_activation_curve_dump(tmp_path, rng):
    m = TWNet.build(twnet_spec("TWNet4"), 0, random_features(rng, 50))
    dump_activation_curves(m, tmp_path / "curves.csv", random_features(rng, 50), points=11)
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0] == "input,feature,activation,x,y"
    assert len(lines) == 1 + 11 * 18


def test_optimizer_copy():
    opt = AdamW()
    opt.state = {"t": 2, "m": {"a": np.ones(2)}, "v": {"a": np.ones(2)}}
    c = opt.copy()
    c.state["m"]["a"][:] = 5
    assert opt.state["m"]["a"].tolist() == [1.0, 1.0]
