import math

import numpy as np
import pytest

from harmiss.network import (
    GATES,
    ClassifierModel,
    NonFiniteError,
    as_sequences,
    backward,
    cross_entropy,
    forward,
    init_model,
    load_model,
    lstm_cell_forward,
    predict_logits,
    save_model,
    sigmoid,
    softmax,
)

from oracles import gradient_check


def _cell_params(h, d, fill=0.0, bias=0.0):
    p = {}
    for g in GATES:
        p[f"W_{g}"] = np.full((h, d), fill)
        p[f"U_{g}"] = np.full((h, h), fill)
        p[f"b_{g}"] = np.full(h, bias)
    for s in ("W", "U", "b"):
        p[s] = np.concatenate([p[f"{s}_{g}"] for g in GATES])
    return p


def test_cell_with_zero_input_and_weights():
    p = _cell_params(3, 2)
    h, c, _ = lstm_cell_forward(np.zeros((1, 2)), np.zeros((1, 3)), np.zeros((1, 3)), p)
    # gates at 0.5, candidate tanh(0) = 0
    np.testing.assert_array_equal(c, 0.0)
    np.testing.assert_array_equal(h, 0.0)


def test_cell_with_saturated_gates():
    p = _cell_params(1, 1, bias=50.0)
    h, c, _ = lstm_cell_forward(np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1)), p)
    # f = i = o = 1, g = tanh(50) = 1, so c = 1 + 1 and h = tanh(2)
    assert c[0, 0] == pytest.approx(2.0)
    assert h[0, 0] == pytest.approx(math.tanh(2.0), abs=1e-12)
    assert h[0, 0] == pytest.approx(0.9640, abs=1e-4)


def test_cell_shape_mismatch():
    with pytest.raises(ValueError):
        lstm_cell_forward(np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((1, 2)), _cell_params(2, 2))


def test_sigmoid_is_stable_and_correct():
    z = np.array([-800.0, -1.0, 0.0, 1.0, 800.0])
    s = sigmoid(z)
    assert np.isfinite(s).all()
    np.testing.assert_allclose(s[1:4], 1 / (1 + np.exp(-z[1:4])), rtol=1e-14)
    assert s[0] == 0.0 and s[-1] == 1.0


def test_softmax_rows_sum_to_one():
    z = np.random.default_rng(0).normal(scale=50, size=(10, 6))
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert (p >= 0).all()


@pytest.mark.parametrize("k", [6, 30])
def test_uniform_prediction_loss_is_log_k(k):
    probs = np.full((4, k), 1.0 / k)
    assert cross_entropy(probs, [0, 1, 2, 3]) == pytest.approx(math.log(k))


def test_loss_floor_keeps_it_finite():
    assert cross_entropy(np.array([[1.0, 0.0]]), [1]) == pytest.approx(-math.log(1e-12))


def test_zero_output_weights_give_uniform_probabilities():
    m = init_model(5, 6, hidden_size=4, dense_units=3, seed=0)
    m.params["W2"][...] = 0.0
    m.params["b2"][...] = 0.0
    probs, _ = forward(m, np.ones((2, 5)))
    np.testing.assert_allclose(probs, 1 / 6)


def test_initialization():
    m = init_model(9, 3, hidden_size=4, dense_units=5, seed=1)
    p = m.params
    assert np.abs(p["W"]).max() <= 1 / 3 and np.abs(p["U"]).max() <= 1 / 2
    np.testing.assert_array_equal(p["b_f"], 1.0)
    for g in ("i", "o", "c"):
        np.testing.assert_array_equal(p[f"b_{g}"], 0.0)
    assert np.array_equal(init_model(9, 3, 4, 5, seed=1).theta, m.theta)


@pytest.mark.parametrize("seed", range(6))
def test_gradient_check(seed):
    rng = np.random.default_rng(seed)
    m = init_model(3, 3, hidden_size=4, dense_units=5, dropout_p=0.2, timesteps=5, seed=seed)
    m.params["b1"][...] = 0.1  # keep ReLU units away from the kink
    X = rng.normal(size=(4, 5, 3))
    y = rng.integers(0, 3, size=4)
    assert gradient_check(m, X, y, dropout_seed=seed) <= 1e-4


def test_identical_rows_give_the_gradient_of_one_row():
    m = init_model(3, 2, hidden_size=4, dense_units=3, dropout_p=0.0, seed=0)
    x = np.zeros((1, 1, 3))
    _, c1 = forward(m, x, "train")
    g1 = backward(m, c1, [1])["theta"].copy()
    _, c2 = forward(m, np.repeat(x, 3, axis=0), "train")
    g2 = backward(m, c2, [1, 1, 1])["theta"]
    np.testing.assert_allclose(g2, g1, atol=1e-15)


def test_without_dropout_train_equals_eval():
    m = init_model(4, 3, hidden_size=5, dense_units=4, dropout_p=0.0, seed=2)
    X = np.random.default_rng(0).normal(size=(6, 4))
    pt, _ = forward(m, X, "train")
    pe, _ = forward(m, X, "eval")
    np.testing.assert_array_equal(pt, pe)
    np.testing.assert_allclose(softmax(predict_logits(m, X)), pe, atol=1e-15)


def test_eval_is_deterministic_and_train_mode_needs_rng():
    m = init_model(4, 3, hidden_size=5, dense_units=4, dropout_p=0.5, seed=2)
    X = np.ones((3, 4))
    assert np.array_equal(forward(m, X)[0], forward(m, X)[0])
    with pytest.raises(ValueError):
        forward(m, X, "train")
    with pytest.raises(ValueError):
        forward(m, X, "predict")


def test_inverted_dropout_preserves_the_expectation():
    # with identity-like dense layers the first dense pre-activation is linear in h
    m = init_model(2, 2, hidden_size=3, dense_units=3, dropout_p=0.3, seed=0)
    m.params["W1"][...] = np.eye(3)
    m.params["b1"][...] = 0.0
    X = np.full((100_000, 2), 0.5)
    rng = np.random.default_rng(0)
    _, cache = forward(m, X, "train", rng)
    h = cache["h"][0]
    np.testing.assert_allclose(cache["hd"].mean(axis=0), h, atol=1e-2)
    assert set(np.unique(cache["scale"])) == {0.0, 1 / 0.7}


def test_training_reduces_loss_on_a_toy_problem():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(32, 4))
    y = (X[:, 0] > 0).astype(int)
    m = init_model(4, 2, hidden_size=8, dense_units=6, dropout_p=0.0, seed=0)
    start = cross_entropy(forward(m, X)[0], y)
    for _ in range(50):
        _, cache = forward(m, X, "train")
        m.theta -= 0.5 * backward(m, cache, y)["theta"]
    assert cross_entropy(forward(m, X)[0], y) < start


def test_non_finite_input_raises():
    m = init_model(2, 2, hidden_size=2, dense_units=2, seed=0)
    with pytest.raises(NonFiniteError, match="input"):
        forward(m, np.array([[np.nan, 0.0]]))
    m.params["W2"][...] = np.inf
    with pytest.raises(NonFiniteError, match="dense2"):
        forward(m, np.ones((1, 2)))


def test_sequences_reshape():
    X = np.arange(12.0).reshape(2, 6)
    assert as_sequences(X, 3).shape == (2, 3, 2)
    with pytest.raises(ValueError):
        as_sequences(X, 4)


def test_views_share_memory_with_theta():
    m = init_model(3, 2, hidden_size=2, dense_units=2, seed=0)
    m.params["U_o"][...] = 7.0
    assert (m.params["U"][4:6] == 7.0).all()
    assert np.shares_memory(m.params["W1"], m.theta)


def test_from_params_round_trip():
    m = init_model(3, 2, hidden_size=2, dense_units=2, seed=0)
    per_gate = {k: v for k, v in m.params.items() if k not in ("W", "U", "b")}
    back = ClassifierModel.from_params(per_gate, **m.hyperparameters())
    assert np.array_equal(back.theta, m.theta)
    per_gate["W1"] = np.zeros((3, 3))
    with pytest.raises(ValueError, match="W1"):
        ClassifierModel.from_params(per_gate, **m.hyperparameters())


def test_checkpoint_round_trip(tmp_path):
    m = init_model(7, 4, hidden_size=3, dense_units=5, dropout_p=0.1, timesteps=1, seed=9)
    save_model(m, tmp_path / "m.npz")
    back = load_model(tmp_path / "m.npz")
    assert np.array_equal(back.theta, m.theta)
    assert back.hyperparameters() == m.hyperparameters()
    X = np.random.default_rng(0).normal(size=(5, 7))
    assert np.array_equal(forward(back, X)[0], forward(m, X)[0])
