"""Tests for the six model families, the training loop, and checkpoints."""

import numpy as np
import pytest

from lagscope import autodiff as ad
from lagscope import models
from lagscope import series as se
from lagscope.gradcheck import run_model_checks


def tiny_config(**over):
    base = {"hidden_size": 5, "channels": 4, "kernel_size": 3}
    base.update(over)
    return models.ModelConfig(**base)


def test_every_model_matches_finite_differences():
    results = run_model_checks(seed=3)
    assert {kind for kind, _, _ in results} == set(models.MODEL_KINDS)
    bad = [(kind, err) for kind, err, _ in results if not err < 1e-5]
    assert not bad, f"model gradient mismatches: {bad}"


def _zero_params(model, head_bias):
    for name, p in model.parameters().items():
        p.values[...] = 0.0
    model.parameters()["b_out"].values[...] = head_bias


@pytest.mark.parametrize("kind", ["lstm", "gru", "tcn"])
def test_zero_weights_predict_head_bias(kind):
    m = models.build_model(kind, 3, 10, tiny_config(), rng=0)
    _zero_params(m, 0.75)
    x = np.random.default_rng(0).standard_normal((4, 10, 3))
    assert np.allclose(m.forward(x).values, 0.75)


def test_models_reject_bad_windows():
    m = models.build_model("lstm", 3, 10, tiny_config(), rng=0)
    with pytest.raises(ValueError, match="zero-length"):
        m.forward(np.zeros((2, 0, 3)))
    with pytest.raises(ValueError, match="variables"):
        m.forward(np.zeros((2, 10, 4)))


def test_imv_step_zero_params_halves_carry():
    d = 4
    m = models.build_model("imv-lstm", 2, 6, tiny_config(hidden_size=d), rng=0)
    _zero_params(m, 0.0)
    B = 3
    C = np.random.default_rng(1).standard_normal((B, 2, d))
    h, c = m.step(ad.Tensor(np.zeros((B, 2, d))), ad.Tensor(C.copy()),
                  ad.Tensor(np.ones((B, 2))))
    assert h.shape == (B, 2, d) and c.shape == (B, 2, d)
    assert np.allclose(c.values, 0.5 * C)
    assert np.allclose(h.values, 0.5 * np.tanh(0.5 * C))


def test_imv_attention_normalized_and_symmetric():
    m = models.build_model("imv-lstm", 3, 8, tiny_config(hidden_size=4), rng=2)
    # Copy variable 0's blocks everywhere so identical input columns produce
    # identical per-variable hidden vectors.
    p = m.parameters()
    for gate in ("i", "j", "f", "o"):
        for name in (f"w_{gate}", f"u_{gate}", f"b_{gate}"):
            p[name].values[...] = p[name].values[0]
    col = np.random.default_rng(3).standard_normal((2, 8, 1))
    x = np.repeat(col, 3, axis=2)
    m.forward(x)
    assert np.abs(m.last_attention.sum(axis=1) - 1.0).max() < 1e-12
    assert np.allclose(m.last_attention, 1.0 / 3.0)


def test_imv_with_one_variable_equals_lstm():
    d = 6
    rng = np.random.default_rng(4)
    imv = models.build_model("imv-lstm", 1, 12, tiny_config(hidden_size=d), rng=5)
    lstm = models.build_model("lstm", 1, 12, tiny_config(hidden_size=d), rng=6)

    ip, lp = imv.parameters(), lstm.parameters()
    # LSTM gate blocks are [i, f, g, o]; the variable-wise cell names the
    # candidate gate j. Map variable 0's blocks onto the fused matrices.
    order = {"i": 0, "f": 1, "j": 2, "o": 3}
    for gate, k in order.items():
        lp["w_x"].values[:, k * d:(k + 1) * d] = ip[f"u_{gate}"].values[0]
        lp["w_h"].values[:, k * d:(k + 1) * d] = ip[f"w_{gate}"].values[0].T
        lp["b"].values[k * d:(k + 1) * d] = ip[f"b_{gate}"].values[0]
    lp["w_out"].values[...] = ip["w_out"].values
    lp["b_out"].values[...] = ip["b_out"].values

    x = rng.standard_normal((3, 12, 1))
    got = imv.forward(x).values
    want = lstm.forward(x).values
    assert np.abs(got - want).max() < 1e-12
    assert np.allclose(imv.last_attention, 1.0)


def test_antisymmetric_effective_matrix_structure():
    m = models.build_model("antisymmetric-rnn", 2, 5, tiny_config(hidden_size=7), rng=7)
    A = m.effective_matrix().values
    gamma = m.config.gamma
    sym = A + A.T
    assert np.array_equal(sym, -2 * gamma * np.eye(7))

    # Symmetric W collapses the effective matrix to pure diffusion.
    w = m.parameters()["w_h"].values
    w[...] = w + w.T
    assert np.array_equal(m.effective_matrix().values, -gamma * np.eye(7))


def test_antisymmetric_zero_step_size_freezes_state():
    m = models.build_model("antisymmetric-rnn", 2, 9,
                           tiny_config(hidden_size=4, step_size=0.0), rng=8)
    x = np.random.default_rng(9).standard_normal((3, 9, 2))
    want = m.parameters()["b_out"].values[0]
    assert np.allclose(m.forward(x).values, want)


def test_antisymmetric_dynamics_stay_bounded():
    m = models.build_model("antisymmetric-rnn", 2, 5,
                           tiny_config(hidden_size=8, gamma=0.01, step_size=0.01), rng=10)
    p = {k: v.values for k, v in m.parameters().items()}
    A = m.effective_matrix().values
    rng = np.random.default_rng(11)
    h = rng.standard_normal(8)
    h /= np.linalg.norm(h)
    worst = 0.0
    for _ in range(1000):
        rec = A @ h
        z = 1.0 / (1.0 + np.exp(-(rec + p["b_z"])))
        h = h + 0.01 * z * np.tanh(rec + p["b_h"])
        worst = max(worst, np.linalg.norm(h))
    assert worst <= 10.0


def test_rhn_gate_saturation():
    m = models.build_model("rhn", 2, 6, tiny_config(hidden_size=4, depth=1), rng=12)
    p = m.parameters()
    rng = np.random.default_rng(13)
    s0 = rng.standard_normal((3, 4))
    xt = rng.standard_normal((3, 2))

    p["b_t0"].values[...] = 500.0   # transform == 1
    p["b_c0"].values[...] = -500.0  # carry == 0
    got = m.step(ad.Tensor(s0.copy()), ad.Tensor(xt)).values
    want = np.tanh(s0 @ p["r_h0"].values + p["b_h0"].values + xt @ p["w_h"].values)
    assert np.array_equal(got, want)

    p["b_t0"].values[...] = -500.0  # pure carry
    p["b_c0"].values[...] = 500.0
    got = m.step(ad.Tensor(s0.copy()), ad.Tensor(xt)).values
    assert np.array_equal(got, s0)


def test_rhn_rejects_depth_zero():
    with pytest.raises(ValueError, match="depth"):
        models.build_model("rhn", 2, 6, tiny_config(depth=0), rng=0)


def test_receptive_field_formula():
    assert models.receptive_field(2, 3) == 15  # dilations {1, 2, 4}
    assert models.receptive_field(7, 3) == 85
    assert models.levels_for_window(7, 64) == 3
    assert models.levels_for_window(3, 64) == 5


def test_tcn_rejects_small_receptive_field():
    with pytest.raises(ValueError, match="need 5 levels"):
        models.build_model("tcn", 2, 64, tiny_config(levels=1, kernel_size=3), rng=0)


def test_tcn_receptive_field_semantics_without_enforcement():
    cfg = tiny_config(levels=1, kernel_size=3, enforce_receptive_field=False)
    m = models.build_model("tcn", 2, 20, cfg, rng=1)  # receptive field 5
    x = np.random.default_rng(2).standard_normal((2, 20, 2))
    base = m.forward(x).values
    far = x.copy()
    far[:, 0, :] += 100.0  # beyond the receptive field of the last step
    assert np.array_equal(m.forward(far).values, base)
    near = x.copy()
    near[:, 19, :] += 1.0
    assert not np.array_equal(m.forward(near).values, base)


def test_tcn_variants_are_distinct_and_finite():
    x = np.random.default_rng(5).standard_normal((3, 16, 2))
    outs = {}
    for variant in models.TCN_VARIANTS:
        m = models.build_model("tcn", 2, 16, tiny_config(variant=variant), rng=42)
        outs[variant] = m.forward(x).values
        assert np.all(np.isfinite(outs[variant]))
    assert len({o.tobytes() for o in outs.values()}) == len(models.TCN_VARIANTS)


def _toy_dataset(T=60, n=2, window=8, seed=0):
    rng = np.random.default_rng(seed)
    s = se.MultivariateSeries(rng.standard_normal((T, n)), [f"v{i}" for i in range(n)])
    return se.make_windows(s, target_index=0, window=window)


def test_train_overfits_single_sample():
    ds = _toy_dataset(T=17, window=16, seed=3)  # exactly one window
    assert len(ds) == 1
    m = models.build_model("tcn", 2, 16, tiny_config(), rng=0)
    cfg = models.TrainConfig(epochs=200, batch_size=1, learning_rate=0.001, seed=0)
    _, history = models.train(m, ds, cfg)
    assert history["train"][-1] <= 0.1 * history["train"][0]


def test_train_zero_learning_rate_is_noop():
    ds = _toy_dataset()
    m = models.build_model("gru", 2, 8, tiny_config(), rng=1)
    before = {k: v.values.tobytes() for k, v in m.parameters().items()}
    _, history = models.train(m, ds, models.TrainConfig(epochs=3, learning_rate=0.0, seed=0))
    after = {k: v.values.tobytes() for k, v in m.parameters().items()}
    assert before == after
    assert history["train"][0] == history["train"][1] == history["train"][2]


def test_train_is_deterministic_under_seed():
    cfg = models.TrainConfig(epochs=3, batch_size=16, seed=9)
    runs = []
    for _ in range(2):
        ds = _toy_dataset(seed=2)
        m = models.build_model("lstm", 2, 8, tiny_config(), rng=4)
        _, history = models.train(m, ds, cfg, eval_set=_toy_dataset(seed=5))
        runs.append((history, {k: v.values.tobytes() for k, v in m.parameters().items()}))
    assert runs[0] == runs[1]
    assert len(runs[0][0]["eval"]) == 3


@pytest.mark.filterwarnings("ignore:overflow")
@pytest.mark.filterwarnings("ignore:invalid value")
def test_train_aborts_on_divergence_with_location():
    ds = _toy_dataset(seed=6)
    ds.inputs[...] = 1e200
    ds.targets[...] = 1e200
    m = models.build_model("tcn", 2, 8, tiny_config(), rng=0)
    with pytest.raises(models.TrainingDivergence, match=r"epoch 1, batch 1"):
        models.train(m, ds, models.TrainConfig(epochs=1, seed=0))


def test_checkpoint_envelope_roundtrip(tmp_path):
    m = models.build_model("antisymmetric-rnn", 3, 7, tiny_config(hidden_size=6), rng=20)
    x = np.random.default_rng(21).standard_normal((4, 7, 3))
    want = m.forward(x).values
    path = tmp_path / "model.json"
    models.save_model(m, path)
    back = models.load_model(path)
    assert back.kind == m.kind
    assert back.config == m.config
    for name, p in m.parameters().items():
        assert back.parameters()[name].values.tobytes() == p.values.tobytes()
    assert np.array_equal(back.forward(x).values, want)


def test_checkpoint_rejects_mismatched_architecture(tmp_path):
    import json
    m = models.build_model("gru", 2, 6, tiny_config(), rng=0)
    path = tmp_path / "model.json"
    models.save_model(m, path)
    doc = json.loads(path.read_text())
    doc["params"]["bogus"] = doc["params"].pop("w_out")
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="do not match"):
        models.load_model(path)
