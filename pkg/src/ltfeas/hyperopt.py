"""Bayesian optimization over mixed continuous/integer/categorical spaces.

Configurations are encoded into the unit cube (categoricals one-hot), a
zero-mean Gaussian process with a Matern-5/2 ARD kernel models the
standardized objective, and expected improvement picks the next point.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr
from scipy.stats import qmc

SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class Continuous:
    name: str
    lo: float
    hi: float
    log: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: lo must be < hi")
        if self.log and self.lo <= 0:
            raise ValueError(f"{self.name}: log scale needs lo > 0")


@dataclass(frozen=True)
class Integer:
    name: str
    lo: int
    hi: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: lo must be < hi")


@dataclass(frozen=True)
class Categorical:
    name: str
    choices: tuple

    def __post_init__(self):
        if len(self.choices) < 1:
            raise ValueError(f"{self.name}: at least one choice required")


class SearchSpace:
    def __init__(self, dims):
        self.dims = list(dims)
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")
        self.slices = []
        k = 0
        for d in self.dims:
            w = len(d.choices) if isinstance(d, Categorical) else 1
            self.slices.append(slice(k, k + w))
            k += w
        self.width = k

    @property
    def categorical_mask(self):
        mask = np.zeros(self.width, dtype=bool)
        for d, sl in zip(self.dims, self.slices):
            if isinstance(d, Categorical):
                mask[sl] = True
        return mask

    def encode(self, config: dict) -> np.ndarray:
        x = np.zeros(self.width)
        for d, sl in zip(self.dims, self.slices):
            v = config[d.name]
            if isinstance(d, Categorical):
                x[sl.start + list(d.choices).index(v)] = 1.0
            elif isinstance(d, Continuous) and d.log:
                x[sl.start] = (math.log(v) - math.log(d.lo)) / (math.log(d.hi) - math.log(d.lo))
            else:
                x[sl.start] = (v - d.lo) / (d.hi - d.lo)
        return x

    def decode(self, x) -> dict:
        x = np.asarray(x, dtype=float)
        out = {}
        for d, sl in zip(self.dims, self.slices):
            if isinstance(d, Categorical):
                out[d.name] = d.choices[int(np.argmax(x[sl]))]
                continue
            u = min(max(float(x[sl.start]), 0.0), 1.0)
            if isinstance(d, Integer):
                out[d.name] = int(min(max(round(d.lo + u * (d.hi - d.lo)), d.lo), d.hi))
            elif d.log:
                out[d.name] = _round12(math.exp(math.log(d.lo) + u * (math.log(d.hi) - math.log(d.lo))))
            else:
                out[d.name] = _round12(d.lo + u * (d.hi - d.lo))
        return out

    def from_unit(self, u) -> np.ndarray:
        """Map one uniform coordinate per dimension to an encoded point."""
        x = np.zeros(self.width)
        for d, sl, ui in zip(self.dims, self.slices, u):
            if isinstance(d, Categorical):
                x[sl.start + min(int(ui * len(d.choices)), len(d.choices) - 1)] = 1.0
            else:
                x[sl.start] = ui
        return x

    def snap(self, x) -> np.ndarray:
        """Encoded representative of the config that ``x`` decodes to."""
        return self.encode(self.decode(x))


def _round12(v):
    # 12 significant digits make decode(encode(c)) == c exact for decoded configs
    return float(f"{v:.12g}")


def dnn_search_space() -> SearchSpace:
    """The tuning space of the DNN classifier."""
    return SearchSpace([
        Integer("n_layers", 5, 10),
        Integer("n_neuron", 200, 500),
        Categorical("activation", ("relu", "leaky_relu", "elu")),
        Continuous("beta1", 0.85, 0.95),
        Continuous("beta2", 0.9, 0.999),
        Integer("batch_size", 200, 800),
        Continuous("lr", 0.001, 0.01, log=True),
        Integer("drop_period", 2, 8),
        Continuous("drop_factor", 0.0, 0.8),
    ])


# --- Gaussian process ---------------------------------------------------------


def matern52(A, B, lengths, var):
    d = (A[:, None, :] - B[None, :, :]) / lengths
    r = np.sqrt(np.maximum(np.sum(d * d, axis=-1), 0.0))
    return var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


@dataclass
class GPPosterior:
    X: np.ndarray
    alpha: np.ndarray
    L: np.ndarray
    lengths: np.ndarray
    var: float
    noise: float
    y_mean: float
    y_std: float

    def __call__(self, Xq):
        """(mean, variance) at query points, in objective units."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Ks = matern52(Xq, self.X, self.lengths, self.var)
        mu = Ks @ self.alpha
        v = np.linalg.solve(self.L, Ks.T)
        var = np.maximum(self.var - np.sum(v * v, axis=0), 0.0)
        return mu * self.y_std + self.y_mean, var * self.y_std**2

    @property
    def noise_std(self):
        return math.sqrt(self.noise) * self.y_std


def _neg_log_ml(theta, X, y, free, n_len):
    """Negative log marginal likelihood and its gradient in log-parameters."""
    lengths = np.ones(X.shape[1])
    lengths[free] = np.exp(theta[:n_len])
    var, noise = math.exp(theta[n_len]), math.exp(theta[n_len + 1])
    D = (X[:, None, :] - X[None, :, :]) / lengths
    D2 = D * D
    r = np.sqrt(np.sum(D2, axis=-1))
    e = np.exp(-SQRT5 * r)
    K0 = var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * e
    K = K0 + (noise + 1e-10) * np.eye(X.shape[0])
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    Linv = np.linalg.solve(L, np.eye(X.shape[0]))
    Kinv = Linv.T @ Linv
    a = Kinv @ y
    nll = 0.5 * y @ a + np.sum(np.log(np.diag(L))) + 0.5 * y.size * math.log(2 * math.pi)
    W = 0.5 * (Kinv - np.outer(a, a))
    # dK/dlog(l_k) = var * 5/3 * (1 + sqrt5 r) e^{-sqrt5 r} * d_k^2
    base = var * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e
    g = np.empty_like(theta)
    g[:n_len] = np.einsum("ij,ijk->k", W * base, D2[:, :, free])
    g[n_len] = np.sum(W * K0)
    g[n_len + 1] = noise * np.trace(W)
    return nll, g


def gp_surrogate(X, y, categorical_mask=None, n_starts: int = 4, seed: int = 0) -> GPPosterior:
    """Fit kernel hyperparameters by multi-start marginal-likelihood maximization.

    Categorical one-hot coordinates keep unit length scales.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("the surrogate needs at least two completed trials")
    cat = np.zeros(X.shape[1], dtype=bool) if categorical_mask is None else np.asarray(categorical_mask)
    free = ~cat
    n_len = int(free.sum())
    y_mean = float(y.mean())
    y_std = float(y.std()) or 1.0
    ys = (y - y_mean) / y_std
    rng = np.random.default_rng(seed)
    bounds = [(math.log(0.01), math.log(10.0))] * n_len + [(math.log(0.05), math.log(20.0)),
                                                           (math.log(1e-6), math.log(0.5))]
    starts = [np.r_[np.full(n_len, math.log(0.3)), 0.0, math.log(1e-3)]]
    for _ in range(n_starts - 1):
        starts.append(np.array([rng.uniform(lo, hi) for lo, hi in bounds]))
    best = None
    for th0 in starts:
        res = minimize(_neg_log_ml, th0, args=(X, ys, free, n_len), jac=True, method="L-BFGS-B",
                       bounds=bounds)
        if best is None or res.fun < best.fun:
            best = res
    th = best.x
    lengths = np.ones(X.shape[1])
    lengths[free] = np.exp(th[:n_len])
    var, noise = math.exp(th[n_len]), math.exp(th[n_len + 1])
    K = matern52(X, X, lengths, var) + (noise + 1e-10) * np.eye(X.shape[0])
    L = np.linalg.cholesky(K)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, ys))
    return GPPosterior(X, alpha, L, lengths, var, noise, y_mean, y_std)


def expected_improvement(mu, var, best):
    """Closed-form EI for maximization; max(0, mu - best) where the variance is 0."""
    mu = np.asarray(mu, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    imp = mu - best
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(sd > 0, imp / np.where(sd > 0, sd, 1.0), 0.0)
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    ei = np.where(sd > 0, imp * ndtr(z) + sd * pdf, np.maximum(imp, 0.0))
    return np.maximum(ei, 0.0)


# --- optimization loop --------------------------------------------------------


@dataclass
class Trial:
    config: dict
    value: float | None
    wall_time: float
    status: str = "ok"
    index: int = 0
    x: list = field(default_factory=list)
    restart: int = 0

    def to_json(self):
        return asdict(self)


def _random_encoded(space, rng, n):
    return np.array([space.from_unit(rng.random(len(space.dims))) for _ in range(n)])


def propose(post: GPPosterior, space: SearchSpace, best: float, rng, n_candidates: int = 2000,
            n_refine: int = 10) -> np.ndarray:
    """Maximize EI over random candidates, then refine the best few locally.

    Refinement moves only the non-categorical coordinates.
    """
    cand = _random_encoded(space, rng, n_candidates)
    mu, var = post(cand)
    ei = expected_improvement(mu, var, best)
    top = np.argsort(-ei, kind="stable")[:n_refine]
    cont = ~space.categorical_mask
    best_x, best_ei = cand[top[0]], ei[top[0]]
    for i in top:
        x0 = cand[i]
        if not cont.any():
            break

        def neg_ei(z, x0=x0):
            x = x0.copy()
            x[cont] = z
            m, v = post(x)
            return -float(expected_improvement(m, v, best)[0])

        res = minimize(neg_ei, x0[cont], method="L-BFGS-B", bounds=[(0.0, 1.0)] * int(cont.sum()))
        if -res.fun > best_ei:
            best_x = x0.copy()
            best_x[cont] = res.x
            best_ei = -res.fun
    return best_x


def _evaluate(objective, space, x, index):
    cfg = space.decode(x)
    t0 = time.perf_counter()
    try:
        val = float(objective(cfg))
        status = "ok" if math.isfinite(val) else "failed"
    except Exception as exc:  # the search continues past failing configurations
        val, status = None, f"failed: {type(exc).__name__}: {exc}"
    if status != "ok":
        val = None
    return Trial(cfg, val, time.perf_counter() - t0, status, index, space.snap(x).tolist())


def bo_run(objective, space: SearchSpace, budget: int = 30, init: int = 8, batch: int = 1,
           seed: int = 0, n_candidates: int = 2000, callback=None, gp_restarts: int = 4):
    """Maximize ``objective(config)``; returns (best trial, history)."""
    if budget < 1 or init < 1 or batch < 1:
        raise ValueError("budget, init and batch must be >= 1")
    rng = np.random.default_rng(seed)
    init = min(init, budget)
    halton = qmc.Halton(d=len(space.dims), scramble=True, seed=seed)
    history = []

    def run_many(xs):
        start = len(history)
        if len(xs) > 1:
            with ThreadPoolExecutor(max_workers=len(xs)) as pool:
                trials = list(pool.map(lambda a: _evaluate(objective, space, a[1], start + a[0]),
                                       enumerate(xs)))
        else:
            trials = [_evaluate(objective, space, xs[0], start)]
        for t in trials:
            history.append(t)
            if callback is not None:
                callback(t)

    for s in range(0, init, batch):
        run_many([space.from_unit(u) for u in halton.random(min(batch, init - s))])
    while len(history) < budget:
        X = np.array([t.x for t in history])
        vals = [t.value for t in history if t.value is not None]
        if len(vals) < 2:
            run_many(list(_random_encoded(space, rng, min(batch, budget - len(history)))))
            continue
        worst = min(vals)
        y = np.array([worst if t.value is None else t.value for t in history])
        f_best = float(y.max())
        post = gp_surrogate(X, y, space.categorical_mask, n_starts=gp_restarts,
                            seed=int(rng.integers(2**31)))
        pending = []
        for _ in range(min(batch, budget - len(history))):
            x = space.snap(propose(post, space, f_best, rng, n_candidates))
            pending.append(x)
            if len(pending) < batch:
                # constant liar: pretend the pending point returned the incumbent
                Xl = np.vstack([X] + pending)
                yl = np.concatenate([y, np.full(len(pending), f_best)])
                post = _refit_same(post, Xl, yl)
        run_many(pending)
    ok = [t for t in history if t.value is not None]
    best = max(ok, key=lambda t: t.value) if ok else None
    return best, history


def _refit_same(post: GPPosterior, X, y) -> GPPosterior:
    """Condition the GP on new data without refitting its hyperparameters."""
    ys = (y - post.y_mean) / post.y_std
    K = matern52(X, X, post.lengths, post.var) + (post.noise + 1e-10) * np.eye(X.shape[0])
    L = np.linalg.cholesky(K)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, ys))
    return GPPosterior(X, alpha, L, post.lengths, post.var, post.noise, post.y_mean, post.y_std)


def random_search(objective, space: SearchSpace, budget: int = 30, seed: int = 0):
    rng = np.random.default_rng(seed)
    history = [_evaluate(objective, space, x, i) for i, x in enumerate(_random_encoded(space, rng, budget))]
    ok = [t for t in history if t.value is not None]
    return (max(ok, key=lambda t: t.value) if ok else None), history


def best_so_far(history):
    out, cur = [], -math.inf
    for t in history:
        if t.value is not None:
            cur = max(cur, t.value)
        out.append(cur)
    return out


def save_trials(history, path) -> None:
    with open(path, "w") as fh:
        json.dump([t.to_json() for t in history], fh, indent=1)


def load_trials(path):
    with open(path) as fh:
        return [Trial(**d) for d in json.load(fh)]
