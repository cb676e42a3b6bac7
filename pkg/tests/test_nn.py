import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expit

from revealkit.nn import autodiff as ad
from revealkit.nn import (AdamState, GradientCheckError, GruParams, MlpParams, Var, adam_step,
                          dropout_mask, grad_check, gru_cell, mlp_forward)
from revealkit.nn.checkpoint import load_checkpoint, save_checkpoint


# GRU

def test_gru_zero_params_halves_state(rng):
    h = rng.uniform(-1, 1, 7)
    m = rng.uniform(-1, 1, 7)
    out = gru_cell(h, m, GruParams.zeros(7, 7)).data
    assert np.allclose(out, 0.5 * h, atol=1e-15)


def test_gru_closed_update_gate_preserves_state(rng):
    p = GruParams.init(5, 5, rng)
    p = GruParams(**{**p.tensors(), "bz": np.full(5, -50.0)})
    h = rng.uniform(-1, 1, 5)
    assert np.allclose(gru_cell(h, np.zeros(5), p).data, h, atol=1e-12)


def test_gru_matches_straight_line_formula(rng):
    p = GruParams.init(3, 4, rng)
    p = GruParams(**{k: v + rng.normal(0, 0.1, v.shape) for k, v in p.tensors().items()})
    h, m = rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 3)
    z = expit(p.Wz @ m + p.Uz @ h + p.bz)
    r = expit(p.Wr @ m + p.Ur @ h + p.br)
    hc = np.tanh(p.Wh @ m + p.Uh @ (r * h) + p.bh)
    expect = (1 - z) * h + z * hc
    assert np.allclose(gru_cell(h, m, p).data, expect, atol=1e-14)


def test_gru_batch_equals_rows(rng):
    p = GruParams.init(4, 4, rng)
    H, M = rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (3, 4))
    batch = gru_cell(H, M, p).data
    for i in range(3):
        assert np.allclose(batch[i], gru_cell(H[i], M[i], p).data, atol=1e-15)


def test_gru_dimension_errors(rng):
    p = GruParams.init(4, 5, rng)
    with pytest.raises(ValueError, match="state"):
        gru_cell(np.zeros(4), np.zeros(4), p)
    with pytest.raises(ValueError, match="input"):
        gru_cell(np.zeros(5), np.zeros(5), p)


@given(st.integers(0, 10_000))
def test_gru_output_finite_and_bounded(seed):
    rng = np.random.default_rng(seed)
    p = GruParams.init(6, 6, rng)
    h = rng.uniform(-1, 1, 6)
    out = gru_cell(h, rng.uniform(-1, 1, 6), p).data
    assert np.isfinite(out).all()
    # convex combination of h and a tanh output
    assert np.all(np.abs(out) <= np.maximum(np.abs(h), 1.0) + 1e-12)


# MLP and dropout

def test_mlp_shapes(rng):
    p = MlpParams.init(10, rng)
    latent, logits = mlp_forward(rng.normal(size=10), p)
    assert latent.shape == (256,) and logits.shape == (2,)
    latent, logits = mlp_forward(rng.normal(size=(4, 10)), p)
    assert latent.shape == (4, 256) and logits.shape == (4, 2)
    assert p.sizes == [10, 256, 128, 256, 2]


def test_mlp_no_dropout_training_flag_is_identity(rng):
    p = MlpParams.init(8, rng, dropout=0.0)
    x = rng.normal(size=(3, 8))
    a = mlp_forward(x, p, training=False)
    b = mlp_forward(x, p, training=True, rng=np.random.default_rng(0))
    assert np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)


def test_mlp_zero_weights_give_uniform_softmax():
    p = MlpParams.zeros(5)
    latent, logits = mlp_forward(np.ones(5), p)
    assert np.all(latent.data == 0) and np.all(logits.data == 0)
    assert np.allclose(ad.softmax(logits.data), [0.5, 0.5])


def test_mlp_dropout_deterministic_per_seed(rng):
    p = MlpParams.init(6, rng, dropout=0.5)
    x = rng.normal(size=(2, 6))
    a = mlp_forward(x, p, True, np.random.default_rng(9))[1].data
    b = mlp_forward(x, p, True, np.random.default_rng(9))[1].data
    assert np.array_equal(a, b)


def test_mlp_input_dimension_error(rng):
    with pytest.raises(ValueError, match="dimension 4, expected 6"):
        mlp_forward(np.zeros(4), MlpParams.init(6, rng))


def test_mlp_dropout_range():
    for bad in (-0.1, 1.0):
        with pytest.raises(ValueError):
            MlpParams.zeros(3, dropout=bad)


@pytest.mark.parametrize("p", [0.2, 0.5])
def test_dropout_empirical_rate(p):
    mask = dropout_mask((10_000,), p, np.random.default_rng(5))
    assert abs((mask == 0).mean() - p) <= 0.05
    assert np.allclose(mask[mask > 0], 1 / (1 - p))


def test_hidden_units_dropped_at_rate(rng):
    p = MlpParams.init(4, rng, dropout=0.2)
    # all-positive preactivations so every zero in the latent comes from dropout
    p = MlpParams(**{**p.tensors(), "W0": np.abs(p.W0), "W1": np.abs(p.W1), "W2": np.abs(p.W2)}, dropout=0.2)
    latent = mlp_forward(np.ones((40, 4)), p, True, np.random.default_rng(1))[0].data
    assert latent.size == 10_240
    assert abs((latent == 0).mean() - 0.2) <= 0.05


# Adam

@pytest.mark.parametrize("g", [3.0, -0.02, 1e-3])
def test_adam_first_step_is_minus_lr_sign(g):
    lr = 1e-3
    new, state = adam_step({"w": np.array([0.7])}, {"w": np.array([g])}, AdamState(), lr)
    assert abs((new["w"][0] - 0.7) - (-lr * math.copysign(1, g))) < 1e-6
    assert state.step == 1


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, -2.0])}
    new, _ = adam_step(params, {"w": np.zeros(2)}, AdamState(), 0.1)
    assert np.array_equal(new["w"], params["w"])


def test_adam_matches_reference_trajectory():
    rng = np.random.default_rng(2)
    p = {"w": rng.normal(size=3)}
    state = AdamState()
    w, m, v = p["w"].copy(), np.zeros(3), np.zeros(3)
    for t in range(1, 6):
        g = rng.normal(size=3)
        p, state = adam_step(p, {"w": g}, state, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p["w"], w, atol=1e-15)
    assert state.step == 5


def test_adam_does_not_mutate_and_is_repeatable():
    p = {"w": np.array([1.0])}
    g = {"w": np.array([0.5])}
    a = adam_step(p, g, AdamState(), 0.1)
    b = adam_step(p, g, AdamState(), 0.1)
    assert p["w"][0] == 1.0
    assert np.array_equal(a[0]["w"], b[0]["w"])


def test_adam_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), 0.1)
    with pytest.raises(ValueError, match="names"):
        adam_step({"w": np.zeros(2)}, {"u": np.zeros(2)}, AdamState(), 0.1)


def test_adam_state_json_round_trip():
    _, s = adam_step({"w": np.ones((2, 2))}, {"w": np.ones((2, 2))}, AdamState(), 0.1)
    back = AdamState.from_json(s.to_json())
    assert back.step == 1 and np.array_equal(back.m["w"], s.m["w"]) and np.array_equal(back.v["w"], s.v["w"])


# gradient checking and the autodiff ops

def test_grad_check_quadratic(rng):
    err = grad_check(lambda t: ad.sum(t["p"] * t["p"]), {"p": rng.normal(size=(30, 10))})
    assert err < 1e-6


def test_grad_check_detects_wrong_gradient(rng):
    def wrong(t):
        x = t["p"]
        return ad.sum(ad._make(x.data ** 2, (x,), lambda g: (g * 3 * x.data,)))
    with pytest.raises(GradientCheckError):
        grad_check(wrong, {"p": rng.normal(size=5)}, tolerance=1e-4)


def test_grad_check_non_finite_loss():
    with np.errstate(divide="ignore"), pytest.raises(ValueError, match="not finite"):
        grad_check(lambda t: ad.sum(t["p"] / 0.0), {"p": np.ones(2)})


def _all_ops_loss(t):
    x, W, b = t["x"], t["W"], t["b"]
    h = ad.tanh(ad.linear(x, W, b))
    s = ad.sigmoid(h) * ad.relu(h + 0.3) - ad.absolute(h - 0.1) / (2.0 + h * h)
    rows = ad.take_rows(s, [0, 2, 2, 1])
    seg = ad.segment_sum(rows, [1, 0, 1, 1], 2)
    n = ad.row_norm(seg) + ad.row_dot(seg, ad.take_rows(s, [0, 1]))
    lp = ad.log_softmax(ad.matmul(s, ad.reshape(t["V"], (4, 3))))
    return ad.mean(n) - ad.mean(ad.pick(lp, [0, 2, 1])) + ad.sum(ad.sum(s, axis=0, keepdims=True))


@given(st.integers(0, 1000))
def test_every_op_passes_grad_check(seed):
    rng = np.random.default_rng(seed)
    params = {"x": rng.normal(size=(3, 5)), "W": rng.normal(size=(4, 5)), "b": rng.normal(size=4),
              "V": rng.normal(size=12)}
    # relu/abs kinks can sit within one probe step of a sample, so use the contract tolerance
    assert grad_check(_all_ops_loss, params, n_samples=200) < 1e-4


def test_backward_accumulates_shared_leaf():
    x = Var(np.array([2.0, 3.0]), requires_grad=True)
    (ad.sum(x * x) + ad.sum(x)).backward()
    assert np.allclose(x.grad, 2 * x.data + 1)


def test_row_norm_gradient_zero_at_origin():
    x = Var(np.zeros((1, 3)), requires_grad=True)
    ad.sum(ad.row_norm(x)).backward()
    assert np.all(x.grad == 0)


# checkpoints

def test_checkpoint_round_trip(tmp_path, rng):
    p = MlpParams.init(4, rng)
    _, state = adam_step(p.tensors(), {k: np.ones_like(v) for k, v in p.tensors().items()}, AdamState(), 0.1)
    path = tmp_path / "ck.json"
    save_checkpoint(path, p.tensors(), kind="repr", seed=7, config={"lr": 0.1}, config_hash="abc",
                    optimizer=state)
    doc = load_checkpoint(path, kind="repr")
    assert doc["seed"] == 7 and doc["step"] == 1 and doc["config_hash"] == "abc"
    for k, v in p.tensors().items():
        assert np.array_equal(doc["params"][k], v)
    assert doc["optimizer"].step == 1
    with pytest.raises(ValueError, match="expected a ggnn checkpoint"):
        load_checkpoint(path, kind="ggnn")
