import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltfeas.hyperopt import (Categorical, Continuous, Integer, SearchSpace, Trial, best_so_far, bo_run,
                             dnn_search_space, expected_improvement, gp_surrogate, load_trials,
                             random_search, save_trials)

from conftest import planted_problem


def test_dimension_validation():
    with pytest.raises(ValueError):
        Continuous("a", 1.0, 1.0)
    with pytest.raises(ValueError):
        Continuous("a", 0.0, 1.0, log=True)
    with pytest.raises(ValueError):
        Integer("n", 3, 2)
    with pytest.raises(ValueError):
        Categorical("c", ())
    with pytest.raises(ValueError):
        SearchSpace([Integer("n", 0, 2), Integer("n", 0, 3)])


def test_encode_lower_corner():
    space = dnn_search_space()
    lo = {"n_layers": 5, "n_neuron": 200, "activation": "relu", "beta1": 0.85, "beta2": 0.9,
          "batch_size": 200, "lr": 0.001, "drop_period": 2, "drop_factor": 0.0}
    x = space.encode(lo)
    assert space.width == 11
    assert x.tolist() == [0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0]
    assert space.decode(x) == lo


def test_log_midpoint():
    space = dnn_search_space()
    x = space.encode({"n_layers": 5, "n_neuron": 200, "activation": "elu", "beta1": 0.9, "beta2": 0.95,
                      "batch_size": 256, "lr": 0.003, "drop_period": 4, "drop_factor": 0.5})
    lr_pos = space.slices[6].start
    x[lr_pos] = 0.5
    assert space.decode(x)["lr"] == pytest.approx(math.sqrt(0.001 * 0.01), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=9, max_size=9))
def test_decode_encode_round_trip(u):
    space = dnn_search_space()
    cfg = space.decode(space.from_unit(u))
    assert space.decode(space.encode(cfg)) == cfg
    assert np.array_equal(space.snap(space.encode(cfg)), space.encode(cfg))
    assert 5 <= cfg["n_layers"] <= 10 and isinstance(cfg["batch_size"], int)


def test_integer_rounding_on_decode():
    space = SearchSpace([Integer("n", 0, 4)])
    assert [space.decode([u])["n"] for u in (0.0, 0.12, 0.13, 0.99, 1.7)] == [0, 0, 1, 4, 4]


# --- GP ---------------------------------------------------------------------------


def test_surrogate_needs_two_points():
    with pytest.raises(ValueError):
        gp_surrogate(np.zeros((1, 2)), np.zeros(1))


def test_surrogate_interpolates_and_shrinks():
    rng = np.random.default_rng(0)
    X = rng.random((12, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
    post = gp_surrogate(X, y)
    mu, var = post(X)
    assert np.all(np.abs(mu - y) <= 3 * post.noise_std + 1e-9)
    _, far = post(np.array([[5.0, 5.0]]))
    assert np.all(var <= far[0] + 1e-12)
    assert np.all(var >= 0)


def test_surrogate_quadratic_regression():
    rng = np.random.default_rng(1)
    X = rng.random((20, 1))
    f = lambda x: (x - 0.4) ** 2
    post = gp_surrogate(X, f(X[:, 0]))
    grid = np.linspace(0, 1, 201)[:, None]
    mu, _ = post(grid)
    truth = f(grid[:, 0])
    rmse = math.sqrt(np.mean((mu - truth) ** 2))
    assert rmse < 0.1 * (truth.max() - truth.min())


def test_expected_improvement_closed_form():
    assert expected_improvement([0.5], [0.0], 1.0)[0] == 0.0
    assert expected_improvement([1.2], [0.0], 1.0)[0] == pytest.approx(0.2)
    assert expected_improvement([1.0], [1.0], 1.0)[0] == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 4), st.floats(-5, 5))
def test_expected_improvement_non_negative(mu, var, best):
    ei = expected_improvement([mu], [var], best)[0]
    assert ei >= 0.0
    if var > 1e-6:
        assert ei > 0.0 or mu - best < -8 * math.sqrt(var)


# --- loop -------------------------------------------------------------------------


def test_budget_equal_init_is_random_search():
    space, _, obj = planted_problem()
    best, hist = bo_run(obj, space, budget=6, init=6, seed=2)
    assert len(hist) == 6
    assert best.value == max(t.value for t in hist)


def test_best_so_far_monotone_and_deterministic():
    space, _, obj = planted_problem()
    _, h1 = bo_run(obj, space, budget=12, init=4, seed=3, n_candidates=300)
    _, h2 = bo_run(obj, space, budget=12, init=4, seed=3, n_candidates=300)
    trace = best_so_far(h1)
    assert all(b >= a for a, b in zip(trace, trace[1:]))
    assert [t.config for t in h1] == [t.config for t in h2]
    assert [t.value for t in h1] == [t.value for t in h2]


def test_failed_trials_are_recorded():
    space, _, obj = planted_problem()

    def flaky(cfg):
        if cfg["a"] > 0.6:
            raise RuntimeError("diverged")
        return obj(cfg)

    best, hist = bo_run(flaky, space, budget=10, init=4, seed=1, n_candidates=200)
    failed = [t for t in hist if t.value is None]
    assert len(hist) == 10
    assert all(t.status.startswith("failed") for t in failed)
    assert best.value is not None and best.config["a"] <= 0.6


def test_batch_proposals():
    space, _, obj = planted_problem()
    seen = []
    best, hist = bo_run(obj, space, budget=10, init=4, batch=3, seed=0, n_candidates=200, callback=seen.append)
    assert len(hist) == 10 and seen == hist
    assert [t.index for t in hist] == list(range(10))


def test_bad_arguments():
    space, _, obj = planted_problem()
    with pytest.raises(ValueError):
        bo_run(obj, space, budget=0)


def test_bo_finds_planted_optimum():
    space, target, obj = planted_problem()
    near = 0
    for seed in range(3):
        best, _ = bo_run(obj, space, budget=30, init=8, seed=seed)
        near += np.linalg.norm(space.encode(best.config) - target) <= 0.05
    assert near >= 2


def test_trials_round_trip(tmp_path):
    space, _, obj = planted_problem()
    _, hist = random_search(obj, space, budget=4, seed=0)
    save_trials(hist, tmp_path / "t.json")
    back = load_trials(tmp_path / "t.json")
    assert [t.to_json() for t in back] == [t.to_json() for t in hist]
    assert isinstance(back[0], Trial)
