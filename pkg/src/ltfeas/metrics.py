"""Confusion counts, precision/recall/F_k, ROC curve and trapezoidal AUC.

The feasible class is the positive class.  Precision and recall with a
zero denominator are reported as ``None`` rather than 0.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    n_tp: int
    n_tn: int
    n_fp: int
    n_fn: int

    @property
    def total(self):
        return self.n_tp + self.n_tn + self.n_fp + self.n_fn


def confusion(y_true, y_pred) -> ConfusionCounts:
    t = np.asarray(y_true).astype(bool)
    p = np.asarray(y_pred).astype(bool)
    if t.shape != p.shape:
        raise ValueError("label and prediction shapes differ")
    return ConfusionCounts(int(np.sum(t & p)), int(np.sum(~t & ~p)),
                           int(np.sum(~t & p)), int(np.sum(t & ~p)))


def f_k(precision, recall, k: float):
    """F_k = (1 + k^2) P R / (k^2 P + R); recall weighted k times more."""
    if precision is None or recall is None:
        return None
    den = k * k * precision + recall
    return 0.0 if den == 0 else (1 + k * k) * precision * recall / den


def scores(counts: ConfusionCounts, k: float = 1.0) -> dict:
    c = counts
    acc = (c.n_tp + c.n_tn) / c.total if c.total else None
    prec = c.n_tp / (c.n_tp + c.n_fp) if c.n_tp + c.n_fp else None
    rec = c.n_tp / (c.n_tp + c.n_fn) if c.n_tp + c.n_fn else None
    return {"accuracy": acc, "precision": prec, "recall": rec, "f_k": f_k(prec, rec, k)}


def roc_curve(scores_pos, y_true):
    """(fpr, tpr, thresholds) sweeping descending unique scores with +-inf sentinels.

    A sample is predicted positive when its score is >= the threshold.
    """
    s = np.asarray(scores_pos, dtype=float)
    t = np.asarray(y_true).astype(bool)
    if s.shape != t.shape or s.ndim != 1:
        raise ValueError("scores and labels must be matching 1-D arrays")
    n_pos, n_neg = int(t.sum()), int((~t).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s_sorted, t_sorted = s[order], t[order]
    tp = np.cumsum(t_sorted)
    fp = np.cumsum(~t_sorted)
    # last index of each run of equal scores; the lowest score coincides with the -inf sentinel
    ends = np.flatnonzero(np.diff(s_sorted) != 0)
    thr = np.concatenate([[math.inf], s_sorted[ends], [-math.inf]])
    tpr = np.concatenate([[0.0], tp[ends] / n_pos, [1.0]])
    fpr = np.concatenate([[0.0], fp[ends] / n_neg, [1.0]])
    return fpr, tpr, thr


def auc(fpr, tpr) -> float:
    fpr, tpr = np.asarray(fpr, dtype=float), np.asarray(tpr, dtype=float)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))


def rank_auc(scores_pos, y_true) -> float:
    """Fraction of (positive, negative) pairs ordered correctly, ties counted 1/2."""
    s = np.asarray(scores_pos, dtype=float)
    t = np.asarray(y_true).astype(bool)
    sp, sn = s[t][:, None], s[~t][None, :]
    return float(((sp > sn).sum() + 0.5 * (sp == sn).sum()) / (sp.size * sn.size))


def report(y_true, proba_pos, threshold: float = 0.5) -> dict:
    y_true = np.asarray(y_true).astype(int)
    proba_pos = np.asarray(proba_pos, dtype=float)
    counts = confusion(y_true, proba_pos >= threshold)
    s1 = scores(counts, 1.0)
    out = {
        "counts": asdict(counts),
        "accuracy": s1["accuracy"],
        "precision": s1["precision"],
        "recall": s1["recall"],
        "f1": s1["f_k"],
        "f10": f_k(s1["precision"], s1["recall"], 10.0),
        "auc": None,
    }
    if 0 < y_true.sum() < y_true.size:
        fpr, tpr, _ = roc_curve(proba_pos, y_true)
        out["auc"] = auc(fpr, tpr)
    return out


def write_report(rep: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=1)


def write_roc_csv(fpr, tpr, thr, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr", "threshold"])
        for a, b, c in zip(fpr, tpr, thr):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(c))])
