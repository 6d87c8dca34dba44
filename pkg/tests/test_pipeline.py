import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltfeas import pipeline
from ltfeas.errors import ExperimentError
from ltfeas.features import FEATURE_NAMES
from ltfeas.pipeline import (PipelineConfig, balance_classes, load_config, load_any_model, make_split,
                             run_experiment, save_any_model, split_dataset, train_model)

FAST = dict(n_trees=4, tree_max_depth=6, max_epochs=3, patience=2, n_seeds=1,
            model={"n_layers": 1, "n_neuron": 16, "batch_size": 64}, tune_budget=3, tune_init=2)


def planted_features(n=400, seed=0, pos_frac=0.5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 103))
    score = X[:, 5] - X[:, 40] + 0.3 * rng.normal(size=n)
    y = (score > np.quantile(score, 1 - pos_frac)).astype(int)
    return list(FEATURE_NAMES), X, y


# --- splitting --------------------------------------------------------------------


def test_split_stratified_and_disjoint():
    y = np.array([0] * 70 + [1] * 30)
    tr, va, te = split_dataset(y, (0.7, 0.15, 0.15), seed=4)
    assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(100))
    for idx, frac in ((tr, 0.7), (va, 0.15), (te, 0.15)):
        for c, total in ((0, 70), (1, 30)):
            assert abs(np.sum(y[idx] == c) - frac * total) < 1.0


def test_split_deterministic_and_seeded():
    y = np.random.default_rng(0).integers(0, 2, 200)
    a = split_dataset(y, seed=1)
    b = split_dataset(y, seed=1)
    c = split_dataset(y, seed=2)
    assert all(np.array_equal(p, q) for p, q in zip(a, b))
    assert not np.array_equal(a[0], c[0])


def test_split_all_train():
    y = np.array([0, 1, 0, 1, 1])
    tr, va, te = split_dataset(y, (1.0, 0.0, 0.0))
    assert tr.size == 5 and va.size == te.size == 0
    with pytest.raises(ValueError):
        split_dataset(y, (0.5, 0.5, 0.5))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=3, max_size=300), st.integers(0, 100))
def test_split_property(labels, seed):
    y = np.array(labels)
    parts = split_dataset(y, (0.6, 0.2, 0.2), seed)
    assert sum(p.size for p in parts) == y.size
    assert np.unique(np.concatenate(parts)).size == y.size


def test_balance_classes():
    y = np.array([0] * 50 + [1] * 8)
    keep = balance_classes(y, 3)
    assert np.sum(y[keep] == 0) == np.sum(y[keep] == 1) == 8
    assert np.array_equal(keep, balance_classes(y, 3))
    with pytest.raises(ExperimentError):
        balance_classes(np.zeros(5))


def test_make_split_balanced():
    names, X, y = planted_features(300, pos_frac=0.2)
    sp = make_split(names, X, y, PipelineConfig(balance=True))
    total = np.concatenate([sp.y_tr, sp.y_va, sp.y_te])
    assert total.size == 120 and total.sum() == 60


# --- config -----------------------------------------------------------------------


def test_config_defaults_and_validation():
    cfg = PipelineConfig()
    assert cfg.top_k == 60 and cfg.hyper["n_layers"] == 5 and cfg.physics["isp"] == 4190.0
    for bad in (dict(split=[0.5, 0.5, 0.0]), dict(top_k=0), dict(model={"depth": 3}),
                dict(tune_objective="auc"), dict(physics={"isp": -1.0, "m_dry": 1000.0, "t_max": 0.236,
                                                          "n_segments": 20}),
                dict(size_models=["svm"])):
        with pytest.raises((ValueError, TypeError)):
            PipelineConfig(**bad)


def test_load_config_merge_and_paths(tmp_path):
    (tmp_path / "cat.csv").write_text("x")
    (tmp_path / "c.json").write_text(json.dumps({"catalog": "cat.csv", "seed": 3, "physics": {"t_max": 0.3},
                                                 "model": {"lr": 0.005}}))
    cfg = load_config(tmp_path / "c.json", {"seed": 9, "physics": {"isp": 3000.0}, "top_k": None})
    assert cfg.seed == 9
    assert cfg.catalog == str((tmp_path / "cat.csv").resolve())
    assert cfg.physics["t_max"] == 0.3 and cfg.physics["isp"] == 3000.0 and cfg.physics["m_dry"] == 1000.0
    assert cfg.hyper["lr"] == 0.005 and cfg.hyper["n_layers"] == 5
    assert cfg.physics_obj.isp == 3000.0


def test_load_config_errors(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ValueError, match="bogus"):
        load_config(tmp_path / "c.json")
    with pytest.raises(ValueError):
        load_config(None, {"nope": 1})
    (tmp_path / "d.json").write_text(json.dumps({"catalog": "missing.csv"}))
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "d.json")
    (tmp_path / "e.json").write_text("[1, 2]")
    with pytest.raises(ValueError):
        load_config(tmp_path / "e.json")


# --- models -----------------------------------------------------------------------


@pytest.mark.parametrize("kind", pipeline.MODEL_KINDS)
def test_train_save_load_every_kind(kind, tmp_path):
    names, X, y = planted_features(200)
    cfg = PipelineConfig(**FAST)
    m = train_model(kind, X[:150], y[:150], X[150:], y[150:], cfg)
    save_any_model(m, tmp_path / "m.json")
    back = load_any_model(tmp_path / "m.json")
    assert np.array_equal(pipeline.predict_pos(back, X[150:]), pipeline.predict_pos(m, X[150:]))
    if kind != "knn":  # plain distances drown in the 101 noise columns
        acc = np.mean((pipeline.predict_pos(m, X[150:]) >= 0.5) == y[150:])
        assert acc > 0.6


def test_unknown_kind_and_model_file(tmp_path):
    names, X, y = planted_features(50)
    with pytest.raises(ValueError):
        train_model("svm", X, y, X, y, PipelineConfig())
    (tmp_path / "x.json").write_text("{}")
    with pytest.raises(ValueError):
        load_any_model(tmp_path / "x.json")


def test_scaled_fits_on_training_rows():
    names, X, y = planted_features(200)
    sp = make_split(names, X, y, PipelineConfig())
    cols = [0, 5, 40]
    scaler, Xtr, _, Xva, _ = pipeline.scaled(sp, cols)
    assert np.allclose(Xtr.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(scaler.mu_x, sp.X_tr[:, cols].mean(axis=0))
    assert scaler.names == [names[j] for j in cols]


def test_augment_skips_balanced():
    X = np.random.default_rng(0).normal(size=(20, 3))
    y = np.array([0, 1] * 10)
    X2, y2 = pipeline.augment_if_imbalanced(X, y, PipelineConfig(), 0)
    assert X2 is X and y2 is y


# --- experiments ------------------------------------------------------------------


def test_feature_select_rows(tmp_path):
    names, X, y = planted_features(300)
    cfg = PipelineConfig(**FAST)
    rows = run_experiment(cfg, "feature-select", names, X, y, tmp_path)
    assert [r["k"] for r in rows] == [30, 40, 50, 55, 60, 65, 70, 103]
    meta = json.loads((tmp_path / "feature_select.json").read_text())
    assert set(meta["ranking"]["names"][:2]) == {FEATURE_NAMES[5], FEATURE_NAMES[40]}
    assert (tmp_path / "feature_select.csv").read_text().startswith("k,accuracy")


def test_size_curve_rows(tmp_path):
    names, X, y = planted_features(300)
    cfg = PipelineConfig(**{**FAST, "size_grid": [0.25, 1.0], "size_models": ["ensemble", "knn"]})
    rows = run_experiment(cfg, "size-curve", names, X, y, tmp_path)
    assert [(r["model"], r["n_train"]) for r in rows] == [("ensemble", 52), ("knn", 52),
                                                         ("ensemble", 210), ("knn", 210)]
    with pytest.raises(ExperimentError, match="short by"):
        run_experiment(PipelineConfig(**{**FAST, "size_grid": [5000]}), "size-curve", names, X, y, tmp_path)


def test_imbalance_study_rows(tmp_path):
    names, X, y = planted_features(400)
    cfg = PipelineConfig(**{**FAST, "majority_multiples": [1, 3]})
    rows = run_experiment(cfg, "imbalance-study", names, X, y, tmp_path)
    assert len(rows) == 4
    m = rows[0]["n_minority"]
    plain = {r["majority_multiple"]: r["n_train"] for r in rows if not r["adasyn"]}
    aug = {r["majority_multiple"]: r["n_train"] for r in rows if r["adasyn"]}
    assert plain == {1: 2 * m, 3: 4 * m}
    assert aug == {1: 2 * m, 3: 6 * m}
    with pytest.raises(ExperimentError, match="short by"):
        run_experiment(PipelineConfig(**{**FAST, "minority_count": 10_000}), "imbalance-study",
                       names, X, y, tmp_path)


def test_final_eval_outputs(tmp_path):
    names, X, y = planted_features(300)
    rep = run_experiment(PipelineConfig(**FAST), "final-eval", names, X, y, tmp_path)
    for f in ("trials.json", "scaler.json", "model.json", "roc.csv", "report.json"):
        assert (tmp_path / f).exists()
    assert len(json.loads((tmp_path / "trials.json").read_text())) == 3
    # 150 per class cut 105 / 23 / 22 by largest remainder
    assert rep["n"] == {"train": 210, "val": 46, "test": 44}
    assert 0.5 <= rep["majority_baseline_val"] <= 1.0
    assert rep["validation"]["accuracy"] is not None and rep["wall_time_s"] > 0


def test_experiment_errors(tmp_path):
    names, X, y = planted_features(50)
    with pytest.raises(ValueError):
        run_experiment(PipelineConfig(), "nope", names, X, y, tmp_path)
    with pytest.raises(ExperimentError):
        run_experiment(PipelineConfig(), "feature-select", names, X, np.zeros(50, dtype=int), tmp_path)
    with pytest.raises(ExperimentError):
        run_experiment(PipelineConfig(), "feature-select", out_dir=tmp_path)


def test_tune_restarts_reseed_and_concatenate():
    names, X, y = planted_features(200)
    cfg = PipelineConfig(**{**FAST, "tune_budget": 2, "tune_init": 2, "tune_restarts": 2})
    sp = make_split(names, X, y, cfg)
    _, Xtr, ytr, Xva, _ = pipeline.scaled(sp, [5, 40, 7])
    seen = []
    best, hist = pipeline.tune((Xtr, ytr, Xva, sp.y_va), cfg, seen.append)
    assert [t.restart for t in hist] == [0, 0, 1, 1]
    assert [t.index for t in hist] == [0, 1, 2, 3] and seen == hist
    assert hist[0].config != hist[2].config
    assert best.value == max(t.value for t in hist)
