"""ADASYN oversampling of the minority class."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdasynParams:
    k: int = 5
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")


def knn_indices(Q, X, k: int, exclude_self: bool = False, chunk: int = 1024) -> np.ndarray:
    """Indices of the k nearest rows of X for each row of Q (Euclidean).

    Ties are broken by the lower index.  With ``exclude_self`` the query
    rows are assumed to be X itself and each row's own index is skipped.
    """
    Q, X = np.asarray(Q, dtype=float), np.asarray(X, dtype=float)
    need = k + 1 if exclude_self else k
    if need > X.shape[0]:
        raise ValueError("not enough reference points for k neighbors")
    out = np.empty((Q.shape[0], k), dtype=np.int64)
    x2 = np.einsum("ij,ij->i", X, X)
    for s in range(0, Q.shape[0], chunk):
        q = Q[s: s + chunk]
        d2 = np.einsum("ij,ij->i", q, q)[:, None] - 2.0 * q @ X.T + x2[None, :]
        # exact recomputation for the candidate set keeps ties deterministic
        if exclude_self:
            d2[np.arange(q.shape[0]), np.arange(s, s + q.shape[0])] = np.inf
        cand = np.argsort(d2, axis=1, kind="stable")[:, : min(X.shape[0], need + 8)]
        for r in range(q.shape[0]):
            c = cand[r]
            if exclude_self:
                c = c[c != s + r]
            exact = np.sum((X[c] - q[r]) ** 2, axis=1)
            order = np.lexsort((c, exact))
            out[s + r] = c[order[:k]]
    return out


def largest_remainder(weights, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights`` (sum exactly total)."""
    w = np.asarray(weights, dtype=float)
    quota = w / w.sum() * total
    base = np.floor(quota).astype(np.int64)
    short = total - int(base.sum())
    rem = quota - base
    # largest remainders first, lower index on ties
    order = np.lexsort((np.arange(w.size), -rem))
    base[order[:short]] += 1
    return base


def adasyn(X, y, params: AdasynParams = AdasynParams()):
    """Returns (X', y'): the input rows in order followed by synthetic minority rows."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if classes.size != 2:
        raise ValueError("ADASYN needs exactly two classes")
    if counts[0] == counts[1]:
        raise ValueError("classes are already balanced; no minority class")
    minority = classes[np.argmin(counts)]
    m_s, m_l = int(counts.min()), int(counts.max())
    if params.k >= m_s:
        raise ValueError(f"k={params.k} must be smaller than the minority count {m_s}")
    G = int(math.floor((m_l - m_s) * params.beta + 0.5))
    if G == 0:
        return X.copy(), y.copy()
    min_idx = np.flatnonzero(y == minority)
    Xmin = X[min_idx]
    nbr_all = knn_indices(Xmin, X, params.k + 1)
    ratios = np.empty(m_s)
    for r, i in enumerate(min_idx):
        nb = nbr_all[r][nbr_all[r] != i][: params.k]
        ratios[r] = np.sum(y[nb] != minority) / params.k
    weights = ratios if ratios.sum() > 0 else np.ones(m_s)
    g = largest_remainder(weights, G)
    nbr_min = knn_indices(Xmin, Xmin, params.k, exclude_self=True)
    rng = np.random.default_rng(params.seed)
    synth = []
    for r in range(m_s):
        for _ in range(g[r]):
            z = nbr_min[r, rng.integers(params.k)]
            lam = rng.random()
            synth.append(Xmin[r] + lam * (Xmin[z] - Xmin[r]))
    Xs = np.array(synth).reshape(G, X.shape[1])
    return np.vstack([X, Xs]), np.concatenate([y, np.full(G, minority, dtype=y.dtype)])
