import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltfeas.metrics import (ConfusionCounts, auc, confusion, f_k, rank_auc, report, roc_curve, scores,
                            write_roc_csv)


def test_confusion_basics(rng):
    y = rng.integers(0, 2, 50)
    c = confusion(y, y)
    assert c.n_fp == c.n_fn == 0 and c.total == 50
    inv = confusion(y, 1 - y)
    assert (inv.n_tp, inv.n_tn, inv.n_fp, inv.n_fn) == (c.n_fn, c.n_fp, c.n_tn, c.n_tp)
    p = rng.integers(0, 2, 50)
    tally = {"tp": 0, "tn": 0, "fp": 0, "fn": 0}
    for t, q in zip(y, p):
        tally[("t" if t == q else "f") + ("p" if q else "n")] += 1
    assert confusion(y, p) == ConfusionCounts(tally["tp"], tally["tn"], tally["fp"], tally["fn"])
    with pytest.raises(ValueError):
        confusion([0, 1], [1])


def test_f_measures_from_published_pairs():
    # the printed pairs are themselves rounded; this row recomputes to 0.9791 / 0.9875
    assert round(f_k(0.9707, 0.9877, 1), 4) == 0.9791
    assert round(f_k(0.9707, 0.9877, 10), 4) == 0.9875
    assert round(f_k(0.8967, 0.9285, 1), 4) == 0.9123
    assert round(f_k(0.8967, 0.9285, 10), 4) == 0.9282


@settings(max_examples=50)
@given(st.floats(0.01, 1.0), st.floats(0.1, 50))
def test_f_fixed_point(x, k):
    assert f_k(x, x, k) == pytest.approx(x, rel=1e-12)


def test_null_scores():
    s = scores(ConfusionCounts(0, 5, 0, 0))
    assert s["precision"] is None and s["recall"] is None and s["f_k"] is None
    assert s["accuracy"] == 1.0
    assert scores(ConfusionCounts(0, 0, 0, 0))["accuracy"] is None
    assert f_k(0.0, 0.0, 1) == 0.0


def test_roc_small_cases():
    fpr, tpr, thr = roc_curve([0.9, 0.1], [1, 0])
    assert list(zip(fpr, tpr)) == [(0, 0), (0, 1), (1, 1)]
    assert thr[0] == np.inf and thr[-1] == -np.inf
    fpr, tpr, _ = roc_curve([0.8, 0.7, 0.2, 0.1], [1, 1, 0, 0])
    assert (0.0, 1.0) in set(zip(fpr, tpr))
    assert auc(fpr, tpr) == 1.0
    fpr, tpr, _ = roc_curve([0.5] * 6, [1, 0, 1, 0, 0, 1])
    assert auc(fpr, tpr) == 0.5
    with pytest.raises(ValueError):
        roc_curve([0.1, 0.2], [1, 1])


def test_roc_matches_threshold_sweep(rng):
    s = np.round(rng.random(60), 1)
    y = rng.integers(0, 2, 60)
    fpr, tpr, thr = roc_curve(s, y)
    for f, t, th in zip(fpr, tpr, thr):
        pred = s >= th
        assert t == np.sum(pred & (y == 1)) / np.sum(y == 1)
        assert f == np.sum(pred & (y == 0)) / np.sum(y == 0)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 200), st.integers(0, 10**6), st.booleans())
def test_trapezoid_equals_rank_statistic(n, seed, coarse):
    rng = np.random.default_rng(seed)
    s = rng.random(n)
    if coarse:
        s = np.round(s, 1)
    y = rng.integers(0, 2, n)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    fpr, tpr, _ = roc_curve(s, y)
    a = auc(fpr, tpr)
    assert abs(a - rank_auc(s, y)) < 1e-12
    assert 0.0 <= a <= 1.0
    # strictly increasing transform and class relabelling
    assert abs(auc(*roc_curve(np.exp(3 * s), y)[:2]) - a) < 1e-12
    assert abs(auc(*roc_curve(s, 1 - y)[:2]) - (1 - a)) < 1e-12


def test_report_and_roc_csv(tmp_path):
    y = np.array([0, 0, 1, 1, 1])
    p = np.array([0.1, 0.6, 0.4, 0.8, 0.9])
    rep = report(y, p)
    assert rep["counts"] == {"n_tp": 2, "n_tn": 1, "n_fp": 1, "n_fn": 1}
    assert rep["accuracy"] == 0.6 and rep["precision"] == pytest.approx(2 / 3)
    assert rep["f10"] == pytest.approx(f_k(2 / 3, 2 / 3, 10))
    assert rep["auc"] == pytest.approx(rank_auc(p, y))
    assert report(np.ones(3), np.full(3, 0.7))["auc"] is None
    write_roc_csv(*roc_curve(p, y), tmp_path / "roc.csv")
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "fpr,tpr,threshold" and len(lines) == 7  # 5 distinct scores
