"""Transfer features, standardization and top-k selection.

A record maps to 103 values: four scenario scalars, five 18-wide state
blocks (elements, equinoctial elements, Cartesian, spherical and
cylindrical coordinates, each for body 1, body 2 and their difference) and
three scalar triples (radius, energy, angular momentum).  Both bodies are
evaluated at the departure epoch.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .astro import ephemeris_at, orbit_scalars, state_to_elements, state_to_frames, wrap_pi
from .datagen import FEASIBLE, INFEASIBLE, LabeledTransfer
from .errors import CatalogMiss

FEATURE_VERSION = 1
N_FEATURES = 103
DEFAULT_TOP_K = 60
CLASS_ORDER = (INFEASIBLE, FEASIBLE)

_BLOCKS = {
    "coe": ("a", "e", "i", "raan", "argp", "nu"),
    "mee": ("p", "f", "g", "h", "k", "L"),
    "pv": ("x", "y", "z", "vx", "vy", "vz"),
    "sph": ("r", "az", "el", "vr", "vaz", "vel"),
    "cyl": ("rho", "theta", "z", "vrho", "vtheta", "vz"),
}
# components whose differences are wrapped to (-pi, pi]
_ANGULAR = {"coe": {2, 3, 4, 5}, "mee": {5}, "pv": set(), "sph": {1, 2}, "cyl": {1}}


def _names():
    names = ["m_i", "tof", "tof_ini", "LamdV"]
    for block, comps in _BLOCKS.items():
        for tag in ("1", "2", "d"):
            names += [f"{block}{tag}_{c}" for c in comps]
    for s in ("R", "E", "H"):
        names += [f"{s}1", f"{s}2", f"d{s}"]
    return tuple(names)


FEATURE_NAMES = _names()
assert len(FEATURE_NAMES) == N_FEATURES


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    values: np.ndarray
    label: str
    names: tuple = FEATURE_NAMES

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (N_FEATURES,) or not np.all(np.isfinite(v)):
            raise ValueError("feature vector must hold 103 finite values")
        object.__setattr__(self, "values", v)


def _wrap_pi(x):
    w = wrap_pi(x)
    return math.pi if w == -math.pi else w


def _block_values(state):
    fr = state_to_frames(state)
    return {
        "coe": state_to_elements(state).as_array(),
        "mee": fr["mee"].as_array(),
        "pv": state.pv,
        "sph": np.array(fr["spherical"]),
        "cyl": np.array(fr["cylindrical"]),
    }


def state_features(state1, state2) -> np.ndarray:
    """The 99 state-derived features for a pair of heliocentric states."""
    b1, b2 = _block_values(state1), _block_values(state2)
    out = []
    for block in _BLOCKS:
        d = b1[block] - b2[block]
        for j in _ANGULAR[block]:
            d[j] = _wrap_pi(d[j])
        out += [b1[block], b2[block], d]
    s1, s2 = orbit_scalars(state1), orbit_scalars(state2)
    for key in ("r_sun", "energy", "h_mag"):
        out.append([s1[key], s2[key], s1[key] - s2[key]])
    return np.concatenate(out)


def build_features(record: LabeledTransfer, catalog) -> FeatureRecord:
    return FeatureRecord(scenario_features(record.scenario, catalog), record.label)


def scenario_features(s, catalog) -> np.ndarray:
    """The 103 feature values of an unlabelled scenario."""
    try:
        b1, b2 = catalog[s.body1_id], catalog[s.body2_id]
    except KeyError as exc:
        raise CatalogMiss(f"body {exc.args[0]} is not in the catalog") from None
    st1 = ephemeris_at(b1, s.epoch_mjd)
    st2 = ephemeris_at(b2, s.epoch_mjd)
    head = np.array([s.m0, s.tof_days, s.tof_ini_days, s.lambert_dv_kms])
    return np.concatenate([head, state_features(st1, st2)])


def build_feature_matrix(records, catalog):
    """(X, y) with y = 1 for feasible records."""
    rows = [build_features(r, catalog) for r in records]
    X = np.array([r.values for r in rows]).reshape(len(rows), N_FEATURES)
    y = np.array([r.label == FEASIBLE for r in rows], dtype=int)
    return X, y


# --- standardization ----------------------------------------------------------


@dataclass
class Scaler:
    names: list
    mu_x: np.ndarray
    sigma_x: np.ndarray
    mu_y: float = 0.0
    sigma_y: float = 1.0

    def to_json(self) -> dict:
        return {"names": list(self.names), "mu_x": self.mu_x.tolist(),
                "sigma_x": self.sigma_x.tolist(), "mu_y": self.mu_y, "sigma_y": self.sigma_y}

    @classmethod
    def from_json(cls, obj) -> "Scaler":
        return cls(list(obj["names"]), np.asarray(obj["mu_x"], dtype=float),
                   np.asarray(obj["sigma_x"], dtype=float), float(obj["mu_y"]), float(obj["sigma_y"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "Scaler":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def fit_scaler(X, mu_y: float = 0.0, sigma_y: float = 1.0, names=None) -> Scaler:
    """Per-column mean and sample (n-1) standard deviation."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two rows")
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValueError("names do not match the matrix width")
    return Scaler(names, X.mean(axis=0), X.std(axis=0, ddof=1), float(mu_y), float(sigma_y))


def apply_scaler(scaler: Scaler, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != scaler.mu_x.size:
        raise ValueError(f"expected width {scaler.mu_x.size}, got shape {X.shape}")
    sig = scaler.sigma_x
    safe = np.where(sig > 0, sig, 1.0)
    Z = (X - scaler.mu_x) / safe * scaler.sigma_y + scaler.mu_y
    Z[:, sig <= 0] = scaler.mu_y
    return Z


# --- selection ----------------------------------------------------------------


def select_top_k(X, names, ranking, k: int = DEFAULT_TOP_K):
    """Columns of the ``k`` best-ranked features, in ranking order."""
    names = list(names)
    if sorted(ranking) != sorted(names):
        raise ValueError("ranking must be a permutation of the feature names")
    if not 1 <= k <= len(names):
        raise ValueError(f"k must lie in [1, {len(names)}]")
    keep = list(ranking[:k])
    pos = {n: j for j, n in enumerate(names)}
    idx = [pos[n] for n in keep]
    return np.asarray(X)[:, idx], keep


# --- files --------------------------------------------------------------------


def write_feature_csv(path, names, X, y) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + ["label"])
        for row, lab in zip(np.asarray(X), np.asarray(y)):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def read_feature_csv(path):
    """Returns (names, X, y)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: header must end with a label column")
        rows = [r for r in reader if r]
    names = header[:-1]
    if not rows:
        return names, np.zeros((0, len(names))), np.zeros(0, dtype=int)
    try:
        data = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    return names, data[:, :-1], data[:, -1].astype(int)
