"""Run configuration, data splitting, model training helpers and experiments.

Everything downstream of the feature CSV lives here so the CLI stays a
thin argument parser.  Scalers and feature rankings are always fit on the
training split.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines, dnn
from .augment import AdasynParams, adasyn, largest_remainder
from .datagen import Physics
from .errors import ExperimentError
from .features import DEFAULT_TOP_K, N_FEATURES, apply_scaler, fit_scaler
from .hyperopt import bo_run, dnn_search_space, save_trials
from .metrics import report, roc_curve, write_report, write_roc_csv
from .nlp import SolveOptions

MODEL_KINDS = ("dnn", "ensemble", "tree", "knn")
EXPERIMENTS = ("size-curve", "imbalance-study", "feature-select", "final-eval")
K_GRID = (30, 40, 50, 55, 60, 65, 70, 103)
MAJORITY_MULTIPLES = (1, 2, 3, 5)

DEFAULT_DNN = {
    "n_layers": 5,
    "n_neuron": 200,
    "activation": "relu",
    "beta1": 0.9,
    "beta2": 0.999,
    "batch_size": 256,
    "lr": 0.003,
    "drop_period": 4,
    "drop_factor": 0.5,
}

_PATH_KEYS = ("catalog", "dataset", "features", "out_dir")


@dataclass
class PipelineConfig:
    catalog: str | None = None
    dataset: str | None = None
    features: str | None = None
    out_dir: str = "runs"
    seed: int = 0
    workers: int = 1
    physics: dict = field(default_factory=lambda: asdict(Physics()))
    solver: dict = field(default_factory=lambda: asdict(SolveOptions()))
    grid_step_days: float = 10.0
    top_k: int = DEFAULT_TOP_K
    model: dict = field(default_factory=lambda: dict(DEFAULT_DNN))
    max_epochs: int = 30
    patience: int = 5
    n_trees: int = 50
    tree_max_depth: int = 20
    tree_min_leaf: int = 5
    knn_k: int = 5
    adasyn_k: int = 5
    adasyn_beta: float = 1.0
    tune_budget: int = 30
    tune_init: int = 8
    tune_batch: int = 1
    tune_objective: str = "accuracy"
    gp_restarts: int = 4
    tune_restarts: int = 1
    split: list = field(default_factory=lambda: [0.7, 0.15, 0.15])
    balance: bool = False
    size_grid: list = field(default_factory=lambda: [0.125, 0.25, 0.5, 1.0])
    size_models: list = field(default_factory=lambda: list(MODEL_KINDS))
    majority_multiples: list = field(default_factory=lambda: list(MAJORITY_MULTIPLES))
    minority_count: int | None = None
    k_grid: list = field(default_factory=lambda: list(K_GRID))
    n_seeds: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self):
        fr = [float(f) for f in self.split]
        if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be three positive numbers summing to 1, got {self.split}")
        self.split = fr
        Physics(**self.physics)
        SolveOptions(**self.solver)
        unknown = set(self.model) - set(DEFAULT_DNN)
        if unknown:
            raise ValueError(f"unknown model hyperparameters {sorted(unknown)}")
        if not 1 <= self.top_k <= N_FEATURES:
            raise ValueError(f"top_k must lie in [1, {N_FEATURES}]")
        if any(not 1 <= int(k) <= N_FEATURES for k in self.k_grid):
            raise ValueError("k_grid entries must lie in [1, 103]")
        if self.tune_objective not in ("accuracy", "f10"):
            raise ValueError("tune_objective must be 'accuracy' or 'f10'")
        if self.workers < 1 or self.n_seeds < 1 or self.tune_restarts < 1:
            raise ValueError("workers, n_seeds and tune_restarts must be >= 1")
        bad = [m for m in self.size_models if m not in MODEL_KINDS]
        if bad:
            raise ValueError(f"unknown size-curve models {bad}")

    @property
    def physics_obj(self) -> Physics:
        return Physics(**self.physics)

    @property
    def solve_options(self) -> SolveOptions:
        return SolveOptions(**self.solver)

    @property
    def hyper(self) -> dict:
        return {**DEFAULT_DNN, **self.model}

    def to_json(self) -> dict:
        return asdict(self)


def config_keys():
    return [f.name for f in fields(PipelineConfig)]


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read a JSON config, apply ``overrides`` (flags win) and resolve paths.

    Relative paths in the file are taken relative to the file itself.
    """
    raw = {}
    base = Path.cwd()
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        base = Path(path).resolve().parent
    known = set(config_keys())
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    for k in _PATH_KEYS:
        if raw.get(k) is not None:
            raw[k] = str((base / raw[k]).resolve())
    for k, v in (overrides or {}).items():
        if k not in known:
            raise ValueError(f"unknown config key {k!r}")
        if v is None:
            continue
        if isinstance(v, dict) and isinstance(raw.get(k), dict):
            raw[k] = {**raw[k], **v}
        elif k in _PATH_KEYS:
            raw[k] = str(Path(v).resolve())
        else:
            raw[k] = v
    cfg = PipelineConfig(**raw)
    for k in ("physics", "solver"):
        default = asdict(Physics()) if k == "physics" else asdict(SolveOptions())
        setattr(cfg, k, {**default, **getattr(cfg, k)})
    cfg.model = cfg.hyper
    cfg.validate()
    if cfg.catalog is not None and not Path(cfg.catalog).is_file():
        raise FileNotFoundError(f"catalog {cfg.catalog} does not exist")
    return cfg


# --- splitting ----------------------------------------------------------------


def split_dataset(y, fractions=(0.7, 0.15, 0.15), seed: int = 0):
    """Stratified (train, val, test) index arrays.

    One seeded permutation of all rows; each class is then cut
    contiguously in permutation order with largest-remainder sizes, so
    every split holds each class within one sample of its global share.
    """
    y = np.asarray(y)
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    perm = np.random.default_rng(seed).permutation(y.size)
    parts = [[], [], []]
    for c in np.unique(y):
        members = perm[y[perm] == c]
        sizes = largest_remainder(fr, members.size)
        cuts = np.concatenate([[0], np.cumsum(sizes)])
        for s in range(3):
            parts[s].append(members[cuts[s]: cuts[s + 1]])
    rank = np.empty(y.size, dtype=np.int64)
    rank[perm] = np.arange(y.size)
    out = []
    for p in parts:
        idx = np.concatenate(p) if p else np.zeros(0, np.int64)
        out.append(idx[np.argsort(rank[idx], kind="stable")].astype(np.int64))
    return tuple(out)


def balance_classes(y, seed: int = 0) -> np.ndarray:
    """Indices keeping every minority row and an equal seeded draw of the majority."""
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise ExperimentError("balancing needs both classes present")
    m = int(counts.min())
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    keep = [np.sort(rng.permutation(np.flatnonzero(y == c))[:m]) for c in classes]
    return np.sort(np.concatenate(keep))


# --- model helpers ------------------------------------------------------------


@dataclass
class Split:
    names: list
    X_tr: np.ndarray
    y_tr: np.ndarray
    X_va: np.ndarray
    y_va: np.ndarray
    X_te: np.ndarray
    y_te: np.ndarray


def make_split(names, X, y, cfg: PipelineConfig) -> Split:
    X, y = np.asarray(X, dtype=float), np.asarray(y).astype(int)
    if cfg.balance:
        keep = balance_classes(y, cfg.seed)
        X, y = X[keep], y[keep]
    tr, va, te = split_dataset(y, cfg.split, cfg.seed)
    return Split(list(names), X[tr], y[tr], X[va], y[va], X[te], y[te])


def rank_features(X, y, names, cfg: PipelineConfig, seed: int | None = None):
    """(importance, ranked names) from a bagged ensemble on the given (training) rows."""
    model = baselines.train_bagged(X, y, n_trees=cfg.n_trees, seed=cfg.seed if seed is None else seed,
                                   max_depth=cfg.tree_max_depth, min_leaf=cfg.tree_min_leaf,
                                   workers=cfg.workers)
    imp, order = baselines.ensemble_importance(model, X.shape[1])
    return imp, [names[j] for j in order]


def columns(names, ranked, k):
    pos = {n: j for j, n in enumerate(names)}
    return [pos[n] for n in ranked[:k]]


def dnn_parts(hp: dict, width: int, cfg: PipelineConfig, seed: int):
    hp = {**DEFAULT_DNN, **hp}
    mc = dnn.MLPConfig(int(hp["n_layers"]), int(hp["n_neuron"]), str(hp["activation"]), input_width=width)
    sched = dnn.TrainSchedule(batch_size=int(hp["batch_size"]), max_epochs=cfg.max_epochs,
                              drop_period=int(hp["drop_period"]), drop_factor=float(hp["drop_factor"]),
                              patience=cfg.patience, seed=seed)
    adam = dnn.AdamHyper(lr=float(hp["lr"]), beta1=float(hp["beta1"]), beta2=float(hp["beta2"]))
    return mc, sched, adam


def train_model(kind: str, X_tr, y_tr, X_va, y_va, cfg: PipelineConfig, hp: dict | None = None,
                seed: int | None = None):
    """Train on already-standardized features."""
    seed = cfg.seed if seed is None else seed
    if kind == "dnn":
        mc, sched, adam = dnn_parts(hp or cfg.hyper, X_tr.shape[1], cfg, seed)
        model, _ = dnn.train(X_tr, y_tr, X_va, y_va, mc, sched, adam)
        return model
    if kind == "ensemble":
        return baselines.train_bagged(X_tr, y_tr, n_trees=cfg.n_trees, seed=seed,
                                      max_depth=cfg.tree_max_depth, min_leaf=cfg.tree_min_leaf,
                                      workers=cfg.workers)
    if kind == "tree":
        return baselines.train_cart(X_tr, y_tr, max_depth=cfg.tree_max_depth, min_leaf=cfg.tree_min_leaf)
    if kind == "knn":
        return baselines.train_knn(X_tr, y_tr, k=min(cfg.knn_k, X_tr.shape[0]))
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def predict_pos(model, X) -> np.ndarray:
    """Feasible-class probability for a DNN or baseline model."""
    if isinstance(model, dnn.MLPModel):
        return dnn.predict_proba(model, X)[:, 1]
    return baselines.predict(model, X)[:, 1]


def save_any_model(model, path) -> None:
    if isinstance(model, dnn.MLPModel):
        model.save(path)
    else:
        baselines.save_model(model, path)


def load_any_model(path):
    with open(path) as fh:
        d = json.load(fh)
    if "layers" in d:
        return dnn.MLPModel.from_json(d)
    if d.get("kind") == "tree":
        return baselines.TreeNode.from_json(d["tree"])
    if d.get("kind") == "ensemble":
        return baselines.EnsembleModel.from_json(d)
    if d.get("kind") == "knn":
        return baselines.KNNModel.from_json(d)
    raise ValueError(f"{path}: not a model file")


def scaled(split: Split, cols, augment: bool = False, cfg: PipelineConfig | None = None, seed: int = 0):
    """Standardize selected columns with a scaler fit on the training rows."""
    names = [split.names[j] for j in cols]
    scaler = fit_scaler(split.X_tr[:, cols], names=names)
    Xtr = apply_scaler(scaler, split.X_tr[:, cols])
    ytr = split.y_tr
    if augment:
        Xtr, ytr = augment_if_imbalanced(Xtr, ytr, cfg, seed)
    return (scaler, Xtr, ytr, apply_scaler(scaler, split.X_va[:, cols]),
            apply_scaler(scaler, split.X_te[:, cols]))


def augment_if_imbalanced(X, y, cfg: PipelineConfig, seed: int):
    counts = np.bincount(np.asarray(y, dtype=int), minlength=2)
    if counts[0] == counts[1]:
        return X, y
    return adasyn(X, y, AdasynParams(k=cfg.adasyn_k, beta=cfg.adasyn_beta, seed=seed))


def eval_metrics(model, X, y) -> dict:
    rep = report(y, predict_pos(model, X))
    rep["n"] = int(len(y))
    return rep


def tune_objective(split_scaled, cfg: PipelineConfig, seed: int):
    """Objective for bo_run: validation accuracy (or F10) of a DNN config."""
    Xtr, ytr, Xva, yva = split_scaled

    def objective(hp):
        model = train_model("dnn", Xtr, ytr, Xva, yva, cfg, hp=hp, seed=seed)
        rep = report(yva, predict_pos(model, Xva))
        val = rep["accuracy"] if cfg.tune_objective == "accuracy" else rep["f10"]
        if val is None:
            raise ExperimentError("objective undefined on the validation split")
        return val

    return objective


def tune(split_scaled, cfg: PipelineConfig, callback=None):
    """Independent BO runs reseeded as seed + r; returns the overall best and all trials."""
    objective = tune_objective(split_scaled, cfg, cfg.seed)
    best, history = None, []
    for r in range(cfg.tune_restarts):
        offset = len(history)

        def tag(t, r=r, offset=offset):
            t.restart, t.index = r, t.index + offset
            if callback is not None:
                callback(t)

        b, h = bo_run(objective, dnn_search_space(), budget=cfg.tune_budget, init=cfg.tune_init,
                      batch=cfg.tune_batch, seed=cfg.seed + r, callback=tag, gp_restarts=cfg.gp_restarts)
        history += h
        if b is not None and (best is None or b.value > best.value):
            best = b
    return best, history


# --- experiments --------------------------------------------------------------


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([r[h] for h in header])


def _write_meta(path, cfg, experiment, rows, extra=None):
    obj = {"experiment": experiment, "seed": cfg.seed, "config": cfg.to_json(), "rows": rows}
    obj.update(extra or {})
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, default=float)


def _need(what, need, have):
    if need > have:
        raise ExperimentError(f"{what} needs {need} samples but only {have} are available "
                              f"(short by {need - have})")


def _subset_sizes(grid, n):
    sizes = []
    for g in grid:
        s = int(round(g * n)) if isinstance(g, float) and g <= 1.0 else int(g)
        _need(f"size-curve subset {g}", s, n)
        if s < 2:
            raise ExperimentError(f"size-curve subset {g} holds fewer than 2 samples")
        sizes.append(s)
    return sizes


def size_curve(names, X, y, cfg: PipelineConfig, out_dir: Path):
    rows = []
    for s in range(cfg.n_seeds):
        seed = cfg.seed + s
        sp = make_split(names, X, y, _with(cfg, seed=seed))
        _, ranked = rank_features(sp.X_tr, sp.y_tr, sp.names, cfg, seed)
        cols = columns(sp.names, ranked, cfg.top_k)
        order = np.random.default_rng(np.random.SeedSequence([seed, 11])).permutation(sp.y_tr.size)
        for size in _subset_sizes(cfg.size_grid, sp.y_tr.size):
            sub = order[:size]
            if np.unique(sp.y_tr[sub]).size < 2:
                raise ExperimentError(f"size-curve subset of {size} samples holds a single class")
            part = Split(sp.names, sp.X_tr[sub], sp.y_tr[sub], sp.X_va, sp.y_va, sp.X_te, sp.y_te)
            _, Xtr, ytr, Xva, Xte = scaled(part, cols)
            for kind in cfg.size_models:
                model = train_model(kind, Xtr, ytr, Xva, part.y_va, cfg, seed=seed)
                rep = eval_metrics(model, Xte, part.y_te)
                rows.append({"seed": seed, "model": kind, "n_train": size,
                             "accuracy": rep["accuracy"], "auc": rep["auc"]})
    _write_csv(out_dir / "size_curve.csv", ["seed", "model", "n_train", "accuracy", "auc"], rows)
    _write_meta(out_dir / "size_curve.json", cfg, "size-curve", rows)
    return rows


def imbalance_study(names, X, y, cfg: PipelineConfig, out_dir: Path):
    """Minority (feasible) count fixed; majority grows by the configured multiples."""
    rows = []
    top = max(cfg.majority_multiples)
    for s in range(cfg.n_seeds):
        seed = cfg.seed + s
        sp = make_split(names, X, y, _with(cfg, seed=seed, balance=False))
        pos = np.flatnonzero(sp.y_tr == 1)
        neg = np.flatnonzero(sp.y_tr == 0)
        m = cfg.minority_count or min(pos.size, neg.size // top)
        _need("imbalance-study minority class", m, pos.size)
        _need(f"imbalance-study majority at multiple {top}", top * m, neg.size)
        if m <= cfg.adasyn_k:
            raise ExperimentError(f"imbalance-study minority count {m} must exceed adasyn_k={cfg.adasyn_k}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 13]))
        pos, neg = rng.permutation(pos)[:m], rng.permutation(neg)
        _, ranked = rank_features(sp.X_tr, sp.y_tr, sp.names, cfg, seed)
        cols = columns(sp.names, ranked, cfg.top_k)
        for mult in cfg.majority_multiples:
            sub = np.sort(np.concatenate([pos, neg[: mult * m]]))
            part = Split(sp.names, sp.X_tr[sub], sp.y_tr[sub], sp.X_va, sp.y_va, sp.X_te, sp.y_te)
            for aug in (False, True):
                _, Xtr, ytr, Xva, Xte = scaled(part, cols, augment=aug, cfg=cfg, seed=seed)
                model = train_model("dnn", Xtr, ytr, Xva, part.y_va, cfg, seed=seed)
                rep = eval_metrics(model, Xte, part.y_te)
                rows.append({"seed": seed, "majority_multiple": mult, "adasyn": aug,
                             "n_minority": int(m), "n_train": int(ytr.size),
                             "precision": rep["precision"], "recall": rep["recall"],
                             "accuracy": rep["accuracy"], "f10": rep["f10"]})
    header = ["seed", "majority_multiple", "adasyn", "n_minority", "n_train",
              "precision", "recall", "accuracy", "f10"]
    _write_csv(out_dir / "imbalance_study.csv", header, rows)
    _write_meta(out_dir / "imbalance_study.json", cfg, "imbalance-study", rows)
    return rows


def feature_select(names, X, y, cfg: PipelineConfig, out_dir: Path):
    sp = make_split(names, X, y, cfg)
    imp, ranked = rank_features(sp.X_tr, sp.y_tr, sp.names, cfg)
    rows = []
    for k in cfg.k_grid:
        cols = columns(sp.names, ranked, int(k))
        _, Xtr, ytr, Xva, Xte = scaled(sp, cols)
        model = train_model("dnn", Xtr, ytr, Xva, sp.y_va, cfg)
        rep = eval_metrics(model, Xte, sp.y_te)
        rows.append({"k": int(k), "accuracy": rep["accuracy"], "precision": rep["precision"],
                     "recall": rep["recall"], "f1": rep["f1"], "f10": rep["f10"], "auc": rep["auc"]})
    _write_csv(out_dir / "feature_select.csv", ["k", "accuracy", "precision", "recall", "f1", "f10", "auc"], rows)
    ranking = {"names": ranked, "importance": [float(imp[sp.names.index(n)]) for n in ranked]}
    _write_meta(out_dir / "feature_select.json", cfg, "feature-select", rows, {"ranking": ranking})
    return rows


def final_eval(names, X, y, cfg: PipelineConfig, out_dir: Path, callback=None):
    """Tune the DNN on the validation split, retrain the best config, report on test."""
    t0 = time.perf_counter()
    sp = make_split(names, X, y, cfg)
    _, ranked = rank_features(sp.X_tr, sp.y_tr, sp.names, cfg)
    cols = columns(sp.names, ranked, cfg.top_k)
    scaler, Xtr, ytr, Xva, Xte = scaled(sp, cols)
    best, history = tune((Xtr, ytr, Xva, sp.y_va), cfg, callback)
    save_trials(history, out_dir / "trials.json")
    if best is None:
        raise ExperimentError("every tuning trial failed")
    model = train_model("dnn", Xtr, ytr, Xva, sp.y_va, cfg, hp=best.config)
    scaler.save(out_dir / "scaler.json")
    model.scaler_ref = "scaler.json"
    model.save(out_dir / "model.json")
    p_te = predict_pos(model, Xte)
    rep = report(sp.y_te, p_te)
    if 0 < sp.y_te.sum() < sp.y_te.size:
        write_roc_csv(*roc_curve(p_te, sp.y_te), out_dir / "roc.csv")
    ens = train_model("ensemble", Xtr, ytr, Xva, sp.y_va, cfg)
    majority = float(max(np.mean(sp.y_va), 1.0 - np.mean(sp.y_va)))
    rep.update({
        "seed": cfg.seed,
        "config": cfg.to_json(),
        "best_hyperparameters": best.config,
        "features": [sp.names[j] for j in cols],
        "n": {"train": int(sp.y_tr.size), "val": int(sp.y_va.size), "test": int(sp.y_te.size)},
        "validation": eval_metrics(model, Xva, sp.y_va),
        "majority_baseline_val": majority,
        "ensemble_validation": eval_metrics(ens, Xva, sp.y_va),
        "ensemble_test": eval_metrics(ens, Xte, sp.y_te),
        "wall_time_s": time.perf_counter() - t0,
    })
    write_report(rep, out_dir / "report.json")
    return rep


def run_experiment(cfg: PipelineConfig, experiment: str, names=None, X=None, y=None, out_dir=None):
    """Run one experiment on the feature matrix; returns its rows or report."""
    if experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    if X is None:
        if cfg.features is None:
            raise ExperimentError("no feature file given")
        from .features import read_feature_csv
        names, X, y = read_feature_csv(cfg.features)
    if len(y) == 0 or np.unique(y).size < 2:
        raise ExperimentError("the feature set must hold both classes")
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = {"size-curve": size_curve, "imbalance-study": imbalance_study,
           "feature-select": feature_select, "final-eval": final_eval}[experiment]
    return run(list(names), np.asarray(X, dtype=float), np.asarray(y).astype(int), cfg, out)


def _with(cfg: PipelineConfig, **kw) -> PipelineConfig:
    return PipelineConfig(**{**cfg.to_json(), **kw})
