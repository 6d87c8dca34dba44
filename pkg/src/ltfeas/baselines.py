"""CART trees, a bagged tree ensemble with risk-based importance, and KNN.

Labels are integers 0 (infeasible) and 1 (feasible); every predictor
returns an (n, 2) array of class probabilities.
"""
from __future__ import annotations

import json
import multiprocessing as mp
from dataclasses import dataclass, field

import numpy as np

from .augment import knn_indices

N_CLASSES = 2


@dataclass
class TreeNode:
    """Leaf when ``feature`` is None; ``risk`` = P(node) * Gini(node)."""

    probs: np.ndarray
    risk: float
    n: int
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self):
        return self.feature is None

    def to_json(self):
        d = {"probs": self.probs.tolist(), "risk": self.risk, "n": self.n}
        if not self.is_leaf:
            d.update(feature=self.feature, threshold=self.threshold,
                     left=self.left.to_json(), right=self.right.to_json())
        return d

    @classmethod
    def from_json(cls, d):
        node = cls(np.asarray(d["probs"], dtype=float), float(d["risk"]), int(d["n"]))
        if "feature" in d:
            node.feature = int(d["feature"])
            node.threshold = float(d["threshold"])
            node.left = cls.from_json(d["left"])
            node.right = cls.from_json(d["right"])
        return node

    def branches(self):
        stack = [self]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                yield node
                stack += [node.right, node.left]

    def depth(self):
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


def _gini(counts):
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / n[..., None]
    return np.where(n > 0, 1.0 - np.sum(p * p, axis=-1), 0.0)


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-D matrix")
    if y.shape != (X.shape[0],):
        raise ValueError("y must have one label per row")
    if np.any((y < 0) | (y >= N_CLASSES)):
        raise ValueError("labels must be 0 or 1")
    return X, y


def _best_split(X, y, min_leaf):
    """(feature, threshold, weighted child impurity) or None; ties -> lowest feature, threshold."""
    n, d = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    left = np.stack([np.cumsum(ys == c, axis=0) for c in range(N_CLASSES)], axis=-1)[:-1]
    total = left[-1] + np.eye(N_CLASSES, dtype=left.dtype)[ys[-1]]
    right = total[None, :, :] - left
    nl = np.arange(1, n)[:, None]
    score = (nl * _gini(left) + (n - nl) * _gini(right)) / n
    valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, np.inf)
    best = score.min()
    # first feature holding the minimum, then the smallest threshold in it
    feats = np.flatnonzero(np.any(score == best, axis=0))
    j = int(feats[0])
    i = int(np.flatnonzero(score[:, j] == best)[0])
    lo, hi = xs[i, j], xs[i + 1, j]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return j, float(thr), float(best)


def train_cart(X, y, max_depth: int = 20, min_leaf: int = 5) -> TreeNode:
    X, y = _check_xy(X, y)
    if max_depth < 0 or min_leaf < 1:
        raise ValueError("max_depth must be >= 0 and min_leaf >= 1")
    N = X.shape[0]

    def grow(idx, depth):
        counts = np.bincount(y[idx], minlength=N_CLASSES).astype(float)
        node = TreeNode(counts / idx.size, float(idx.size / N * _gini(counts)), int(idx.size))
        if depth >= max_depth or node.risk == 0.0 or idx.size < 2 * min_leaf:
            return node
        split = _best_split(X[idx], y[idx], min_leaf)
        if split is None:
            return node
        j, thr, _ = split
        mask = X[idx, j] <= thr
        node.feature, node.threshold = j, thr
        node.left = grow(idx[mask], depth + 1)
        node.right = grow(idx[~mask], depth + 1)
        return node

    return grow(np.arange(N), 0)


def predict_tree(tree: TreeNode, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = np.empty((X.shape[0], N_CLASSES))
    stack = [(tree, np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if node.is_leaf:
            out[idx] = node.probs
            continue
        mask = X[idx, node.feature] <= node.threshold
        stack.append((node.left, idx[mask]))
        stack.append((node.right, idx[~mask]))
    return out


# --- ensemble -----------------------------------------------------------------


@dataclass
class EnsembleModel:
    trees: list
    seeds: list
    n_trees: int = field(init=False)

    def __post_init__(self):
        self.n_trees = len(self.trees)

    def to_json(self):
        return {"kind": "ensemble", "n_trees": self.n_trees, "seeds": list(self.seeds),
                "trees": [t.to_json() for t in self.trees]}

    @classmethod
    def from_json(cls, d):
        return cls([TreeNode.from_json(t) for t in d["trees"]], list(d["seeds"]))


def bootstrap_indices(n: int, seed: int, tree_index: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, tree_index]))
    return rng.integers(0, n, size=n)


_BAG = {}


def _bag_init(X, y, params):
    _BAG.update(X=X, y=y, params=params)


def _bag_tree(args):
    t, seed, bootstrap = args
    X, y, params = _BAG["X"], _BAG["y"], _BAG["params"]
    idx = bootstrap_indices(X.shape[0], seed, t) if bootstrap else np.arange(X.shape[0])
    return train_cart(X[idx], y[idx], **params)


def train_bagged(X, y, n_trees: int = 50, seed: int = 0, max_depth: int = 20, min_leaf: int = 5,
                 bootstrap: bool = True, workers: int = 1) -> EnsembleModel:
    """Bagged CART trees; tree t sees the bootstrap drawn from (seed, t)."""
    X, y = _check_xy(X, y)
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    params = {"max_depth": max_depth, "min_leaf": min_leaf}
    jobs = [(t, seed, bootstrap) for t in range(n_trees)]
    if workers > 1:
        with mp.get_context("fork").Pool(workers, _bag_init, (X, y, params)) as pool:
            trees = pool.map(_bag_tree, jobs)
    else:
        _bag_init(X, y, params)
        trees = [_bag_tree(j) for j in jobs]
    return EnsembleModel(trees, [seed] * n_trees)


def predict_ensemble(model: EnsembleModel, X) -> np.ndarray:
    return np.mean([predict_tree(t, X) for t in model.trees], axis=0)


def tree_importance(tree: TreeNode, n_features: int) -> np.ndarray:
    imp = np.zeros(n_features)
    nb = 0
    for node in tree.branches():
        imp[node.feature] += node.risk - node.left.risk - node.right.risk
        nb += 1
    return imp / nb if nb else imp


def ensemble_importance(model: EnsembleModel, n_features: int):
    """(importance vector, ranking as feature indices), ranking descending with index tie-break."""
    imp = np.mean([tree_importance(t, n_features) for t in model.trees], axis=0)
    ranking = np.lexsort((np.arange(n_features), -imp))
    return imp, ranking


# --- KNN ----------------------------------------------------------------------


@dataclass
class KNNModel:
    X: np.ndarray
    y: np.ndarray
    k: int = 5

    def __post_init__(self):
        self.X, self.y = _check_xy(self.X, self.y)
        if not 1 <= self.k <= self.X.shape[0]:
            raise ValueError("k must lie in [1, n_train]")

    def to_json(self):
        return {"kind": "knn", "k": self.k, "X": self.X.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.asarray(d["X"], dtype=float), np.asarray(d["y"]), int(d["k"]))


def train_knn(X, y, k: int = 5) -> KNNModel:
    return KNNModel(np.asarray(X, dtype=float), np.asarray(y), k)


def predict_knn(model: KNNModel, X) -> np.ndarray:
    nb = knn_indices(np.asarray(X, dtype=float), model.X, model.k)
    frac = model.y[nb].mean(axis=1)
    return np.column_stack([1.0 - frac, frac])


# --- persistence --------------------------------------------------------------


def save_model(model, path) -> None:
    obj = model.to_json() if not isinstance(model, TreeNode) else {"kind": "tree", "tree": model.to_json()}
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_model(path):
    with open(path) as fh:
        d = json.load(fh)
    kind = d.get("kind")
    if kind == "tree":
        return TreeNode.from_json(d["tree"])
    if kind == "ensemble":
        return EnsembleModel.from_json(d)
    if kind == "knn":
        return KNNModel.from_json(d)
    raise ValueError(f"{path}: unknown model kind {kind!r}")


def predict(model, X) -> np.ndarray:
    if isinstance(model, TreeNode):
        return predict_tree(model, X)
    if isinstance(model, EnsembleModel):
        return predict_ensemble(model, X)
    if isinstance(model, KNNModel):
        return predict_knn(model, X)
    raise TypeError(f"unsupported model {type(model).__name__}")
