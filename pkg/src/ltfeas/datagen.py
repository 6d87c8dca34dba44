"""Random transfer scenarios, Lambert time-of-flight seeding and labelling.

Each record ``i`` of a dataset draws from its own generator seeded with
``(seed, i)``, so the content never depends on worker count or on the
order in which workers finish.
"""
from __future__ import annotations

import json
import math
import multiprocessing as mp
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .astro import BodyRecord, ClassicalElements, ephemeris_at, lambert_solve
from .constants import (EPOCH_RANGE_MJD, ISP_S, G0, M0_RANGE_KG, M_DRY_KG, N_SEGMENTS,
                        T_MAX_N, TOF_INI_RANGE_DAYS, TU_DAYS, VU_KMS)
from .errors import DegenerateGeometry, NoSolution, NumericalFailure, SamplingFailure
from .nlp import SolveOptions, solve
from .sft import DecisionVector, SFProblem

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
LT_WINDOW = (1.2, 2.0)
MAX_SAMPLING_ATTEMPTS = 1000
RECORD_KEYS = ("id", "seed", "body1_id", "body2_id", "epoch_mjd", "m0_kg", "tof_days",
               "tof_ini_days", "lambert_dv_kms", "label", "final_mass_kg", "defect_norm",
               "solve_iters")


@dataclass(frozen=True)
class Physics:
    """Spacecraft and transcription constants used when labelling."""

    m_dry: float = M_DRY_KG
    t_max: float = T_MAX_N
    isp: float = ISP_S
    n_segments: int = N_SEGMENTS

    def __post_init__(self):
        if not (self.m_dry > 0 and self.t_max > 0 and self.isp > 0):
            raise ValueError("m_dry, t_max and isp must be positive")
        if self.n_segments < 2:
            raise ValueError("n_segments must be >= 2")


@dataclass(frozen=True)
class TransferScenario:
    body1_id: int
    body2_id: int
    epoch_mjd: float
    m0: float
    tof_days: float
    tof_ini_days: float
    lambert_dv_kms: float

    def __post_init__(self):
        validate_scenario(self)


def validate_scenario(s: TransferScenario, tol: float = 1e-9) -> None:
    if s.body1_id == s.body2_id:
        raise ValueError("departure and arrival bodies must differ")
    lo, hi = EPOCH_RANGE_MJD
    if not lo <= s.epoch_mjd <= hi:
        raise ValueError(f"epoch {s.epoch_mjd} outside [{lo}, {hi}]")
    if not M0_RANGE_KG[0] <= s.m0 <= M0_RANGE_KG[1]:
        raise ValueError(f"m0 {s.m0} outside {M0_RANGE_KG}")
    if not TOF_INI_RANGE_DAYS[0] <= s.tof_ini_days <= TOF_INI_RANGE_DAYS[1]:
        raise ValueError(f"tof_ini {s.tof_ini_days} outside {TOF_INI_RANGE_DAYS}")
    w_lo, w_hi = lt_window(s.tof_ini_days)
    if not (w_lo - tol <= s.tof_days <= w_hi + tol):
        raise ValueError(f"tof {s.tof_days} outside window [{w_lo}, {w_hi}]")
    if not (math.isfinite(s.lambert_dv_kms) and s.lambert_dv_kms >= 0):
        raise ValueError("lambert_dv_kms must be finite and non-negative")


def lt_window(tof_ini_days: float):
    """Low-thrust time-of-flight window; empty when lo > hi."""
    return LT_WINDOW[0] * tof_ini_days, min(LT_WINDOW[1] * tof_ini_days, TOF_INI_RANGE_DAYS[1])


@dataclass(frozen=True)
class LabeledTransfer:
    scenario: TransferScenario
    label: str
    final_mass_kg: float | None
    defect_norm: float
    solve_iters: int
    seed: int

    def __post_init__(self):
        if self.label not in (FEASIBLE, INFEASIBLE):
            raise ValueError(f"unknown label {self.label!r}")
        if (self.label == FEASIBLE) != (self.final_mass_kg is not None):
            raise ValueError("final_mass_kg must be present iff the label is feasible")

    @property
    def feasible(self):
        return self.label == FEASIBLE

    def to_record(self, record_id: int) -> dict:
        s = self.scenario
        return {
            "id": record_id, "seed": self.seed, "body1_id": s.body1_id, "body2_id": s.body2_id,
            "epoch_mjd": s.epoch_mjd, "m0_kg": s.m0, "tof_days": s.tof_days,
            "tof_ini_days": s.tof_ini_days, "lambert_dv_kms": s.lambert_dv_kms,
            "label": self.label, "final_mass_kg": self.final_mass_kg,
            "defect_norm": self.defect_norm, "solve_iters": self.solve_iters,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LabeledTransfer":
        missing = set(RECORD_KEYS) - set(rec)
        if missing:
            raise ValueError(f"record is missing keys {sorted(missing)}")
        scenario = TransferScenario(int(rec["body1_id"]), int(rec["body2_id"]), float(rec["epoch_mjd"]),
                                    float(rec["m0_kg"]), float(rec["tof_days"]),
                                    float(rec["tof_ini_days"]), float(rec["lambert_dv_kms"]))
        fm = rec["final_mass_kg"]
        return cls(scenario, rec["label"], None if fm is None else float(fm),
                   float(rec["defect_norm"]), int(rec["solve_iters"]), int(rec["seed"]))


# --- catalog ------------------------------------------------------------------


def synth_catalog(n: int, seed: int, epoch_mjd: float = EPOCH_RANGE_MJD[0]) -> dict[int, BodyRecord]:
    """Main-belt-like bodies: a in [2, 3.5] AU, e in [0, 0.3], i in [0, 20] deg."""
    if n < 2:
        raise ValueError("a catalog needs at least two bodies")
    rng = np.random.default_rng(seed)
    bodies = {}
    for k in range(1, n + 1):
        el = ClassicalElements(
            a=float(rng.uniform(2.0, 3.5)),
            e=float(rng.uniform(0.0, 0.3)),
            i=math.radians(float(rng.uniform(0.0, 20.0))),
            raan=float(rng.uniform(0.0, 2 * math.pi)),
            argp=float(rng.uniform(0.0, 2 * math.pi)),
            nu=float(rng.uniform(0.0, 2 * math.pi)),
        )
        bodies[k] = BodyRecord(k, f"SYN-{k:05d}", float(epoch_mjd), el)
    return bodies


# --- scenario sampling --------------------------------------------------------


def lambert_grid_search(body1: BodyRecord, body2: BodyRecord, epoch_mjd: float,
                        grid_step_days: float = 10.0):
    """Minimum total rendezvous delta-v over a time-of-flight grid.

    Returns (tof_ini_days, lambert_dv_kms).
    """
    if not grid_step_days > 0:
        raise ValueError("grid_step_days must be positive")
    lo, hi = TOF_INI_RANGE_DAYS
    dep = ephemeris_at(body1, epoch_mjd)
    best = (math.inf, None)
    for tof in np.arange(lo, hi + 1e-9, grid_step_days):
        arr = ephemeris_at(body2, epoch_mjd + tof)
        try:
            v1, v2 = lambert_solve(dep.position, arr.position, tof / TU_DAYS)
        except (DegenerateGeometry, NumericalFailure):
            continue
        dv = float(np.linalg.norm(v1 - dep.velocity) + np.linalg.norm(arr.velocity - v2))
        if dv < best[0]:
            best = (dv, float(tof))
    if best[1] is None:
        raise NoSolution("every Lambert grid point was degenerate")
    return best[1], best[0] * VU_KMS


def sample_scenario(catalog, rng: np.random.Generator, grid_step_days: float = 10.0) -> TransferScenario:
    ids = sorted(catalog)
    if len(ids) < 2:
        raise SamplingFailure("catalog needs at least two bodies")
    for _ in range(MAX_SAMPLING_ATTEMPTS):
        i1, i2 = rng.choice(len(ids), size=2, replace=False)
        b1, b2 = catalog[ids[i1]], catalog[ids[i2]]
        epoch = float(rng.uniform(*EPOCH_RANGE_MJD))
        m0 = float(rng.uniform(*M0_RANGE_KG))
        try:
            tof_ini, dv = lambert_grid_search(b1, b2, epoch, grid_step_days)
        except NoSolution:
            continue
        w_lo, w_hi = lt_window(tof_ini)
        if w_lo > w_hi:
            continue
        tof = float(rng.uniform(w_lo, w_hi))
        return TransferScenario(b1.id, b2.id, epoch, m0, tof, tof_ini, dv)
    raise SamplingFailure(f"no valid scenario after {MAX_SAMPLING_ATTEMPTS} attempts")


# --- labelling ----------------------------------------------------------------


def build_problem(scenario: TransferScenario, catalog, physics: Physics | None = None) -> SFProblem:
    ph = physics or Physics()
    dep = ephemeris_at(catalog[scenario.body1_id], scenario.epoch_mjd)
    arr = ephemeris_at(catalog[scenario.body2_id], scenario.epoch_mjd + scenario.tof_days)
    return SFProblem(dep.with_mass(scenario.m0), arr.pv, scenario.m0, scenario.tof_days,
                     m_dry=ph.m_dry, n_segments=ph.n_segments, t_max=ph.t_max, isp=ph.isp, g0=G0,
                     epoch_mjd=scenario.epoch_mjd)


def initial_guess(problem: SFProblem, lambert_dv_kms: float) -> DecisionVector:
    """Zero controls with a rocket-equation mass guess from the Lambert delta-v."""
    m_f = problem.m0 * math.exp(-lambert_dv_kms * 1e3 / (problem.isp * problem.g0))
    return DecisionVector.ballistic(problem, min(max(m_f, problem.m_dry), problem.m0))


def label_scenario(scenario: TransferScenario, catalog, solve_opts: SolveOptions | None = None,
                   seed: int = 0, physics: Physics | None = None) -> LabeledTransfer:
    problem = build_problem(scenario, catalog, physics)
    res = solve(problem, initial_guess(problem, scenario.lambert_dv_kms), solve_opts)
    label = FEASIBLE if res.converged else INFEASIBLE
    return LabeledTransfer(scenario, label, res.final_mass if res.converged else None,
                           _finite(res.defect_norm), res.major_iters, seed)


def _finite(x):
    return x if math.isfinite(x) else 1e300


# --- datasets -----------------------------------------------------------------


def record_seed(seed: int, index: int) -> int:
    """Per-record integer seed mixed from the dataset seed and the record index."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> 1)


_WORKER = {}


def _init_worker(catalog, solve_opts, grid_step_days, physics=None):
    _WORKER.update(catalog=catalog, opts=solve_opts, step=grid_step_days, physics=physics)


def _make_record(args):
    index, seed = args
    rs = record_seed(seed, index)
    rng = np.random.default_rng(rs)
    scenario = sample_scenario(_WORKER["catalog"], rng, _WORKER["step"])
    lab = label_scenario(scenario, _WORKER["catalog"], _WORKER["opts"], seed=rs,
                         physics=_WORKER["physics"])
    return json.dumps(lab.to_record(index))


def generate_dataset(catalog, n: int, workers: int, seed: int, out_path,
                     solve_opts: SolveOptions | None = None, grid_step_days: float = 10.0,
                     progress=None, physics: Physics | None = None) -> dict:
    """Label records 0..n-1 and append the missing ones to ``out_path``.

    Records already present (by id) are kept, so an interrupted run resumes
    and a smaller dataset is a prefix of a larger one with the same seed.
    """
    if n < 0 or workers < 1:
        raise ValueError("n must be >= 0 and workers >= 1")
    out_path = Path(out_path)
    existing = {}
    if out_path.exists():
        for rec in read_records(out_path):
            existing[rec["id"]] = rec
    # fail on unwritable paths before any solve starts
    with open(out_path, "a"):
        pass
    todo = [(i, seed) for i in range(n) if i not in existing]
    new = {}
    if todo:
        init = (catalog, solve_opts, grid_step_days, physics)
        with open(out_path, "a") as fh:
            if workers == 1:
                _init_worker(*init)
                lines = map(_make_record, todo)
                pool = None
            else:
                pool = mp.get_context("fork" if os.name == "posix" else "spawn").Pool(
                    workers, initializer=_init_worker, initargs=init)
                lines = pool.imap(_make_record, todo, chunksize=1)
            try:
                for k, line in enumerate(lines):
                    fh.write(line + "\n")
                    fh.flush()
                    rec = json.loads(line)
                    new[rec["id"]] = rec
                    if progress is not None:
                        progress(k + 1, len(todo))
            finally:
                if pool is not None:
                    pool.close()
                    pool.join()
    recs = [existing.get(i) or new[i] for i in range(n)]
    n_feas = sum(r["label"] == FEASIBLE for r in recs)
    return {"n_feasible": n_feas, "n_infeasible": n - n_feas,
            "convergence_rate": n_feas / n if n else None}


def read_records(path, validate: bool = True) -> list[dict]:
    """Load a record file, re-validating every scenario; duplicate ids keep the first."""
    out, seen = [], set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from None
            if validate:
                try:
                    LabeledTransfer.from_record(rec)
                except (ValueError, TypeError, KeyError) as exc:
                    raise ValueError(f"{path}:{lineno}: invalid record ({exc})") from None
            if rec["id"] in seen:
                continue
            seen.add(rec["id"])
            out.append(rec)
    return out


def read_dataset(path) -> list[LabeledTransfer]:
    return [LabeledTransfer.from_record(r) for r in read_records(path)]


def scenario_dict(s: TransferScenario) -> dict:
    return asdict(s)
