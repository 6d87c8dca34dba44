"""Fully connected feasibility classifier written directly in numpy.

Summed softmax cross-entropy, backpropagation, Adam with bias
correction, a step learning-rate drop and early stopping on the
validation loss.  Everything runs in float64 so gradients can be checked
against finite differences.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "leaky_relu", "elu")
LEAKY_SLOPE = 0.01
ELU_ALPHA = 1.0
P_FLOOR = 1e-12
LOG_P_FLOOR = float(np.log(P_FLOOR))
CLASS_ORDER = ("infeasible", "feasible")


@dataclass(frozen=True)
class MLPConfig:
    n_layers: int
    n_neuron: int
    activation: str = "relu"
    input_width: int = 60
    output_width: int = 2

    def __post_init__(self):
        if self.n_layers < 1 or self.n_neuron < 1 or self.input_width < 1:
            raise ValueError("n_layers, n_neuron and input_width must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.output_width != 2:
            raise ValueError("the classifier has exactly two outputs")

    @property
    def widths(self):
        return [self.input_width] + [self.n_neuron] * self.n_layers + [self.output_width]


@dataclass(frozen=True)
class TrainSchedule:
    batch_size: int = 256
    max_epochs: int = 30
    drop_period: int = 4
    drop_factor: float = 0.5
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.drop_period < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, drop_period and max_epochs must be >= 1")
        if not 0.0 <= self.drop_factor <= 1.0:
            raise ValueError("drop_factor must lie in [0, 1]")


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: list
    v: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 0.001
    t: int = 0

    @classmethod
    def zeros_like(cls, params, hyper: AdamHyper = AdamHyper()):
        m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        return cls(m, v, hyper.beta1, hyper.beta2, hyper.eps, hyper.lr, 0)


# --- network ------------------------------------------------------------------


def init_network(config: MLPConfig, seed: int):
    """He-normal weights (variance 2 / fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    w = config.widths
    return [(rng.normal(0.0, np.sqrt(2.0 / w[i]), size=(w[i], w[i + 1])), np.zeros(w[i + 1]))
            for i in range(len(w) - 1)]


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    return np.where(z > 0, z, ELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def _act_grad(z, a, kind):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    return np.where(z > 0, 1.0, a + ELU_ALPHA)


def _labels(labels, n):
    y = np.asarray(labels)
    if y.ndim == 2:
        y = y.argmax(axis=1)
    y = y.astype(np.int64)
    if y.shape != (n,):
        raise ValueError("one label per sample required")
    return y


def _forward(params, X, kind):
    acts, pre = [X], []
    a = X
    for W, b in params[:-1]:
        z = a @ W + b
        a = _act(z, kind)
        pre.append(z)
        acts.append(a)
    W, b = params[-1]
    logits = a @ W + b
    return logits, acts, pre


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    s = logits - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def forward_loss(params, X, labels, activation: str = "relu"):
    """Summed cross-entropy over the batch and the (n, 2) class probabilities."""
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    y = _labels(labels, X.shape[0])
    logits, _, _ = _forward(params, X, activation)
    logp = _log_softmax(logits)
    lp_true = logp[np.arange(y.size), y]
    loss = -float(np.sum(np.maximum(lp_true, LOG_P_FLOOR)))
    return loss, np.exp(logp)


def backward(params, X, labels, activation: str = "relu"):
    """Gradients [(dW, db), ...] of the summed cross-entropy, and the loss."""
    X = np.asarray(X, dtype=float)
    y = _labels(labels, X.shape[0])
    logits, acts, pre = _forward(params, X, activation)
    logp = _log_softmax(logits)
    idx = np.arange(y.size)
    lp_true = logp[idx, y]
    loss = -float(np.sum(np.maximum(lp_true, LOG_P_FLOOR)))
    delta = np.exp(logp)
    delta[idx, y] -= 1.0
    # clamped samples contribute a constant to the loss
    delta[lp_true < LOG_P_FLOOR] = 0.0
    grads = [None] * len(params)
    for li in range(len(params) - 1, -1, -1):
        W, _ = params[li]
        grads[li] = (acts[li].T @ delta, delta.sum(axis=0))
        if li > 0:
            delta = (delta @ W.T) * _act_grad(pre[li - 1], acts[li], activation)
    return grads, loss


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; returns new (params, state)."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for (W, b), (gW, gb), (mW, mb), (vW, vb) in zip(params, grads, state.m, state.v):
        layer_p, layer_m, layer_v = [], [], []
        for p, g, m, v in ((W, gW, mW, vW), (b, gb, mb, vb)):
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            p = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
            layer_p.append(p)
            layer_m.append(m)
            layer_v.append(v)
        new_p.append(tuple(layer_p))
        new_m.append(tuple(layer_m))
        new_v.append(tuple(layer_v))
    return new_p, AdamState(new_m, new_v, b1, b2, state.eps, state.lr, t)


# --- training -----------------------------------------------------------------


@dataclass
class MLPModel:
    config: MLPConfig
    params: list
    scaler_ref: str | None = None
    history: list = field(default_factory=list)

    def to_json(self):
        return {
            "config": asdict(self.config),
            "scaler_ref": self.scaler_ref,
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.params],
            "class_order": list(CLASS_ORDER),
        }

    @classmethod
    def from_json(cls, d):
        cfg = MLPConfig(**d["config"])
        params = [(np.asarray(l["W"], dtype=float), np.asarray(l["b"], dtype=float)) for l in d["layers"]]
        widths = cfg.widths
        if len(params) != len(widths) - 1 or any(
                W.shape != (widths[i], widths[i + 1]) for i, (W, _) in enumerate(params)):
            raise ValueError("layer shapes do not match the config")
        return cls(cfg, params, d.get("scaler_ref"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def learning_rate(base_lr: float, epoch: int, schedule: TrainSchedule) -> float:
    """Step drop: lr * factor ** floor(epoch / period), epochs counted from 0."""
    return base_lr * schedule.drop_factor ** (epoch // schedule.drop_period)


def train(X, y, X_val, y_val, config: MLPConfig, schedule: TrainSchedule = TrainSchedule(),
          adam: AdamHyper = AdamHyper(), init_seed: int | None = None):
    """Mini-batch Adam training; returns (best-validation model, per-epoch history)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if X.shape[1] != config.input_width:
        raise ValueError(f"expected {config.input_width} input columns, got {X.shape[1]}")
    X_val = np.asarray(X_val, dtype=float)
    y_val = np.asarray(y_val).astype(np.int64)
    params = init_network(config, schedule.seed if init_seed is None else init_seed)
    state = AdamState.zeros_like(params, adam)
    rng = np.random.default_rng(schedule.seed)
    history = []
    best = (np.inf, params)
    stale = 0
    for epoch in range(schedule.max_epochs):
        state.lr = learning_rate(adam.lr, epoch, schedule)
        perm = rng.permutation(X.shape[0])
        train_loss = 0.0
        for s in range(0, X.shape[0], schedule.batch_size):
            bi = perm[s: s + schedule.batch_size]
            grads, loss = backward(params, X[bi], y[bi], config.activation)
            train_loss += loss
            params, state = adam_step(params, grads, state)
        if X_val.shape[0]:
            val_loss, p = forward_loss(params, X_val, y_val, config.activation)
            val_loss /= X_val.shape[0]
            val_acc = float(np.mean(p.argmax(axis=1) == y_val))
        else:
            val_loss, val_acc = train_loss / X.shape[0], float("nan")
        history.append({"epoch": epoch, "lr": state.lr, "train_loss": train_loss / X.shape[0],
                        "val_loss": val_loss, "val_acc": val_acc})
        if not np.isfinite(val_loss):
            break
        if val_loss < best[0]:
            best = (val_loss, params)
            stale = 0
        else:
            stale += 1
            if stale >= schedule.patience:
                break
    return MLPModel(config, best[1], history=history), history


def predict_proba(model: MLPModel, X) -> np.ndarray:
    """Class probabilities; column 1 is the feasible class."""
    X = np.asarray(X, dtype=float)
    logits, _, _ = _forward(model.params, X, model.config.activation)
    return np.exp(_log_softmax(logits))


def best_val_accuracy(history) -> float:
    """Validation accuracy at the epoch with the lowest validation loss."""
    best = min(history, key=lambda h: h["val_loss"])
    return best["val_acc"]
