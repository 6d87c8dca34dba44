import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltfeas.dnn import (AdamHyper, AdamState, MLPConfig, MLPModel, TrainSchedule, adam_step, backward,
                        best_val_accuracy, forward_loss, init_network, learning_rate, predict_proba,
                        train)


def toy(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = (X[:, 0] - 0.5 * X[:, 1] > 0).astype(int)
    return X, y


def test_config_validation():
    with pytest.raises(ValueError):
        MLPConfig(0, 10)
    with pytest.raises(ValueError):
        MLPConfig(2, 10, activation="tanh")
    with pytest.raises(ValueError):
        TrainSchedule(drop_factor=1.5)
    assert MLPConfig(3, 7, input_width=5).widths == [5, 7, 7, 7, 2]


def test_init_deterministic_zero_bias():
    cfg = MLPConfig(2, 300, input_width=400)
    a, b = init_network(cfg, 4), init_network(cfg, 4)
    assert all(np.array_equal(Wa, Wb) for (Wa, _), (Wb, _) in zip(a, b))
    assert all(not bb.any() for _, bb in a)
    for W, _ in a:
        fan_in = W.shape[0]
        if fan_in >= 200:
            assert abs(W.var() / (2.0 / fan_in) - 1.0) < 0.2


def test_probabilities_and_loss_identities():
    cfg = MLPConfig(2, 6, input_width=3)
    params = init_network(cfg, 0)
    X = np.random.default_rng(1).normal(size=(9, 3))
    y = np.arange(9) % 2
    loss, p = forward_loss(params, X, y)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(predict_proba(MLPModel(cfg, params), X), p, atol=0)
    # zero output layer gives a uniform prediction
    zero = params[:-1] + [(np.zeros_like(params[-1][0]), np.zeros(2))]
    assert forward_loss(zero, X, y)[0] == pytest.approx(9 * math.log(2), rel=1e-14)
    # a rigged output layer predicting class 1 with certainty
    rig = params[:-1] + [(np.zeros_like(params[-1][0]), np.array([-1e3, 1e3]))]
    assert forward_loss(rig, X, np.ones(9, dtype=int))[0] == 0.0
    # the clamp bounds the loss of a confidently wrong prediction
    assert forward_loss(rig, X, np.zeros(9, dtype=int))[0] == pytest.approx(-9 * math.log(1e-12))
    with pytest.raises(ValueError):
        forward_loss(params, np.full((2, 3), np.nan), [0, 1])


def test_softmax_shift_invariance():
    cfg = MLPConfig(1, 4, input_width=2)
    params = init_network(cfg, 3)
    W, b = params[-1]
    X = np.random.default_rng(0).normal(size=(5, 2))
    p1 = forward_loss(params, X, np.zeros(5))[1]
    p2 = forward_loss(params[:-1] + [(W, b + 123.0)], X, np.zeros(5))[1]
    assert np.allclose(p1, p2, atol=1e-12)


@pytest.mark.parametrize("activation", ["relu", "leaky_relu", "elu"])
def test_gradients_match_finite_differences(activation):
    rng = np.random.default_rng(7)
    cfg = MLPConfig(2, 8, activation=activation, input_width=3)
    params = [(W + 0.1 * rng.normal(size=W.shape), b + 0.1 * rng.normal(size=b.shape))
              for W, b in init_network(cfg, 1)]
    X = rng.normal(size=(6, 3))
    y = rng.integers(0, 2, 6)
    grads, _ = backward(params, X, y, activation)
    h = 1e-5
    worst = 0.0
    for li, (W, b) in enumerate(params):
        for arr, g in ((W, grads[li][0]), (b, grads[li][1])):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                fp = forward_loss(params, X, y, activation)[0]
                arr[idx] = old - h
                fm = forward_loss(params, X, y, activation)[0]
                arr[idx] = old
                fd = (fp - fm) / (2 * h)
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-6))
    assert worst < 1e-5


def test_output_bias_gradient_hand_derivation():
    cfg = MLPConfig(1, 3, input_width=2)
    params = [(np.zeros((2, 3)), np.zeros(3)), (np.zeros((3, 2)), np.array([0.3, -0.2]))]
    X = np.zeros((4, 2))
    y = np.array([0, 1, 1, 1])
    grads, _ = backward(params, X, y)
    p = np.exp([0.3, -0.2]) / np.exp([0.3, -0.2]).sum()
    onehot = np.eye(2)[y]
    assert np.allclose(grads[-1][1], (p - onehot).sum(axis=0), atol=1e-15)


def test_duplicated_batch_doubles_gradient():
    cfg = MLPConfig(2, 5, input_width=3)
    params = init_network(cfg, 2)
    X = np.random.default_rng(3).normal(size=(7, 3))
    y = np.arange(7) % 2
    g1, l1 = backward(params, X, y)
    g2, l2 = backward(params, np.vstack([X, X]), np.r_[y, y])
    assert l2 == pytest.approx(2 * l1, rel=1e-14)
    for (a, b), (c, d) in zip(g1, g2):
        assert np.allclose(c, 2 * a, rtol=1e-13, atol=1e-15) and np.allclose(d, 2 * b, rtol=1e-13, atol=1e-15)


def _scalar_state(lr=0.1):
    return AdamState([(np.zeros(1), np.zeros(1))], [(np.zeros(1), np.zeros(1))], 0.9, 0.999, 1e-8, lr)


def test_adam_first_step_is_sign():
    g = [(np.array([3.0]), np.array([-1e-3]))]
    p, _ = adam_step([(np.zeros(1), np.zeros(1))], g, _scalar_state())
    assert p[0][0][0] == pytest.approx(-0.1 * 3 / (3 + 1e-8))
    assert p[0][1][0] == pytest.approx(0.1 * 1e-3 / (1e-3 + 1e-8))


def test_adam_zero_gradient_no_move():
    params = [(np.ones(2), np.ones(1))]
    p, _ = adam_step(params, [(np.zeros(2), np.zeros(1))], AdamState.zeros_like(params))
    assert np.array_equal(p[0][0], params[0][0]) and np.array_equal(p[0][1], params[0][1])


def test_adam_hand_unrolled():
    theta, m, v = 0.0, 0.0, 0.0
    trace = []
    for t in range(1, 4):
        m = 0.9 * m + 0.1
        v = 0.999 * v + 0.001
        theta -= 0.1 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        trace.append(theta)
    params, state = [(np.zeros(1), np.zeros(1))], _scalar_state()
    got = []
    for _ in range(3):
        params, state = adam_step(params, [(np.ones(1), np.ones(1))], state)
        got.append(params[0][0][0])
    assert np.allclose(got, trace, rtol=0, atol=1e-12)
    assert state.t == 3


def test_learning_rate_schedule():
    s = TrainSchedule(drop_period=4, drop_factor=0.5)
    assert [learning_rate(0.01, e, s) for e in (0, 3, 4, 8)] == [0.01, 0.01, 0.005, 0.0025]
    flat = TrainSchedule(drop_factor=1.0)
    assert {learning_rate(0.01, e, flat) for e in range(30)} == {0.01}


def test_training_separable_and_deterministic():
    X, y = toy()
    Xv, yv = toy(60, 1)
    cfg = MLPConfig(2, 16, input_width=2)
    sched = TrainSchedule(batch_size=32, max_epochs=50, patience=50, drop_factor=1.0, seed=3)
    model, hist = train(X, y, Xv, yv, cfg, sched, AdamHyper(lr=0.01))
    acc = np.mean(predict_proba(model, X).argmax(1) == y)
    assert acc >= 0.99
    assert hist[0]["lr"] == hist[-1]["lr"] == 0.01
    _, hist2 = train(X, y, Xv, yv, cfg, sched, AdamHyper(lr=0.01))
    assert hist == hist2
    assert 0.0 <= best_val_accuracy(hist) <= 1.0


def test_first_epoch_lowers_loss():
    X, y = toy()
    cfg = MLPConfig(2, 16, input_width=2)
    params = init_network(cfg, 0)
    before = forward_loss(params, X, y)[0] / len(y)
    model, _ = train(X, y, X[:0], y[:0], cfg, TrainSchedule(batch_size=20, max_epochs=1), AdamHyper(lr=0.01),
                     init_seed=0)
    assert forward_loss(model.params, X, y)[0] / len(y) < before


def test_early_stopping_returns_best():
    X, y = toy(100)
    rng = np.random.default_rng(2)
    yv = rng.integers(0, 2, 40)  # noise labels: validation loss soon rises
    Xv = rng.normal(size=(40, 2))
    model, hist = train(X, y, Xv, yv, MLPConfig(3, 32, input_width=2), TrainSchedule(max_epochs=40, patience=3),
                        AdamHyper(lr=0.05))
    best = min(h["val_loss"] for h in hist)
    assert forward_loss(model.params, Xv, yv)[0] / 40 == pytest.approx(best, rel=1e-12)
    assert len(hist) < 40


def test_training_errors():
    cfg = MLPConfig(1, 4, input_width=2)
    with pytest.raises(ValueError):
        train(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)), np.zeros(0), cfg)
    with pytest.raises(ValueError):
        train(np.zeros((4, 3)), np.zeros(4), np.zeros((0, 3)), np.zeros(0), cfg)


def test_model_json_round_trip(tmp_path):
    cfg = MLPConfig(2, 5, "elu", input_width=3)
    m = MLPModel(cfg, init_network(cfg, 9), scaler_ref="s.json")
    m.save(tmp_path / "m.json")
    back = MLPModel.load(tmp_path / "m.json")
    X = np.random.default_rng(0).normal(size=(4, 3))
    assert back.config == cfg and back.scaler_ref == "s.json"
    assert np.array_equal(predict_proba(back, X), predict_proba(m, X))
    bad = m.to_json()
    bad["config"]["n_neuron"] = 6
    with pytest.raises(ValueError):
        MLPModel.from_json(bad)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["relu", "leaky_relu", "elu"]))
def test_rows_are_distributions(seed, activation):
    cfg = MLPConfig(2, 6, activation, input_width=4)
    X = np.random.default_rng(seed).normal(scale=10.0, size=(8, 4))
    p = predict_proba(MLPModel(cfg, init_network(cfg, seed)), X)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12) and np.all(p >= 0)
