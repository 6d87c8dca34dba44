"""Sims-Flanagan transcription of a rendezvous transfer.

The transfer is cut into ``n_segments`` equal-time segments, each with a
bounded impulse at its centre (coast, kick, coast).  The first
``ceil(n/2)`` segments are propagated forward from the departure body,
the rest backward from the arrival body, and the two meet at the match
point.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .astro import StateVector, kepler_propagate
from .constants import (ACC_UNIT_MS2, G0, ISP_S, M_DRY_KG, N_SEGMENTS, T_MAX_N,
                        TU_DAYS, TU_S, VU_KMS, VU_MS)
from .errors import InfeasibleMass

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True, eq=False)
class SFProblem:
    departure_state: StateVector
    arrival_pv: np.ndarray
    m0: float
    tof: float  # days
    m_dry: float = M_DRY_KG
    n_segments: int = N_SEGMENTS
    t_max: float = T_MAX_N
    isp: float = ISP_S
    g0: float = G0
    epoch_mjd: float = 0.0

    def __post_init__(self):
        arr = np.array(self.arrival_pv, dtype=float).reshape(6)
        arr.flags.writeable = False
        object.__setattr__(self, "arrival_pv", arr)
        if self.n_segments < 2:
            raise ValueError("n_segments must be >= 2")
        if not self.tof > 0:
            raise ValueError("tof must be positive")
        if not self.m0 > self.m_dry > 0:
            raise ValueError("require m0 > m_dry > 0")
        if not (self.t_max > 0 and self.isp > 0):
            raise ValueError("t_max and isp must be positive")

    # canonical-unit quantities used by the kernels
    @property
    def tof_tu(self):
        return self.tof / TU_DAYS

    @property
    def seg_dt(self):
        return self.tof_tu / self.n_segments

    @property
    def thrust_norm(self):
        """T_max / m0 in canonical acceleration units."""
        return self.t_max / (self.m0 * ACC_UNIT_MS2)

    @property
    def ve(self):
        return self.isp * self.g0 / VU_MS

    @property
    def n_forward(self):
        return (self.n_segments + 1) // 2

    @property
    def t_match(self):
        return self.seg_dt * self.n_forward

    @property
    def departure_pv(self):
        return self.departure_state.pv

    def kernel_args(self):
        return (self.departure_pv, self.arrival_pv, self.n_segments, self.seg_dt,
                self.thrust_norm, self.ve)


@dataclass(frozen=True, eq=False)
class DecisionVector:
    controls: np.ndarray  # (n, 3)
    m_f: float  # kg

    def __post_init__(self):
        u = np.array(self.controls, dtype=float)
        if u.ndim != 2 or u.shape[1] != 3:
            raise ValueError("controls must have shape (n, 3)")
        object.__setattr__(self, "controls", u)

    def __eq__(self, other):
        return (isinstance(other, DecisionVector) and self.m_f == other.m_f
                and np.array_equal(self.controls, other.controls))

    @classmethod
    def ballistic(cls, problem: SFProblem, m_f=None):
        return cls(np.zeros((problem.n_segments, 3)), problem.m0 if m_f is None else m_f)


@dataclass(frozen=True)
class MatchDefect:
    dp: np.ndarray
    dv: np.ndarray
    dm: float

    def as_array(self):
        return np.concatenate([self.dp, self.dv, [self.dm]])

    def norm_inf(self):
        return float(np.max(np.abs(self.as_array())))


# --- encoding -----------------------------------------------------------------


def encode_decision(problem: SFProblem, decision: DecisionVector) -> np.ndarray:
    """Flat vector [u_0, ..., u_{n-1}, m_f/m0] of length 3n + 1."""
    return np.concatenate([decision.controls.reshape(-1), [decision.m_f / problem.m0]])


def decode_decision(problem: SFProblem, x) -> DecisionVector:
    x = np.asarray(x, dtype=float)
    n = problem.n_segments
    if x.shape != (3 * n + 1,):
        raise ValueError(f"expected flat decision of length {3 * n + 1}, got {x.shape}")
    return DecisionVector(x[: 3 * n].reshape(n, 3), x[3 * n] * problem.m0)


def decision_bounds(problem: SFProblem):
    n = problem.n_segments
    lo = np.concatenate([-np.ones(3 * n), [problem.m_dry / problem.m0]])
    hi = np.ones(3 * n + 1)
    return lo, hi


# --- dynamics -----------------------------------------------------------------


def impulse_dv(problem: SFProblem, u, seg_dt: float, mass: float) -> float:
    """Impulse magnitude in canonical velocity units for a segment of ``seg_dt`` TU."""
    un = float(np.linalg.norm(u))
    return problem.t_max * un * seg_dt * TU_S / mass / VU_MS


def apply_impulse(state: StateVector, u, seg_dt: float, problem: SFProblem,
                  direction: str = FORWARD, check_mass: bool = True) -> StateVector:
    """Apply one bounded impulse; ``state.mass`` is in kg and ``seg_dt`` in TU.

    Forward: the impulse is sized from the pre-impulse mass and the rocket
    equation gives the post-impulse mass.  Backward: ``state`` is the
    post-impulse state and the pre-impulse mass is recovered by solving the
    rocket equation, which makes the two directions exact inverses.
    """
    u = np.asarray(u, dtype=float)
    un = float(np.linalg.norm(u))
    if un > math.sqrt(3.0) * (1 + 1e-12):
        raise ValueError("control outside the [-1, 1]^3 box")
    if un == 0.0:
        return state
    ve = problem.ve
    k = problem.t_max * seg_dt * TU_S / VU_MS  # Δv * mass, canonical velocity · kg
    if direction == FORWARD:
        m_post = state.mass * math.exp(-k * un / (state.mass * ve))
        if check_mass and m_post < problem.m_dry:
            raise InfeasibleMass(f"mass {m_post:.3f} kg falls below dry mass {problem.m_dry} kg")
        return StateVector(state.position, state.velocity + (k / state.mass) * u, m_post)
    if direction == BACKWARD:
        m_pre = state.mass * math.exp(k * un / (state.mass * ve))
        for _ in range(30):
            ex = math.exp(-k * un / (m_pre * ve))
            resid = m_pre * ex - state.mass
            m_pre -= resid / (ex * (1.0 + k * un / (m_pre * ve)))
            if abs(resid) <= 1e-16 * state.mass:
                break
        return StateVector(state.position, state.velocity - (k / m_pre) * u, m_pre)
    raise ValueError(f"unknown direction {direction!r}")


def propagate_leg(problem: SFProblem, decision: DecisionVector, direction: str = FORWARD) -> StateVector:
    """State (mass in kg) at the match point reached by one leg."""
    return _leg_states(problem, decision, direction)[-1]["after"]


def _leg_states(problem, decision, direction):
    """Per-segment records of one leg, in propagation order.

    ``pre``/``post`` are the states just before/after the impulse in
    forward time; ``after`` is the state at the end of the segment in the
    direction of propagation.
    """
    n, nf, h = problem.n_segments, problem.n_forward, 0.5 * problem.seg_dt
    if direction == FORWARD:
        state = problem.departure_state.with_mass(problem.m0)
        segs, sgn = range(nf), 1.0
    elif direction == BACKWARD:
        state = StateVector(problem.arrival_pv[:3], problem.arrival_pv[3:], decision.m_f)
        segs, sgn = range(n - 1, nf - 1, -1), -1.0
    else:
        raise ValueError(f"unknown direction {direction!r}")
    rows = []
    for k in segs:
        state = kepler_propagate(state, sgn * h)
        kicked = apply_impulse(state, decision.controls[k], problem.seg_dt, problem,
                               direction, check_mass=False)
        pre, post = (state, kicked) if direction == FORWARD else (kicked, state)
        state = kepler_propagate(kicked, sgn * h)
        rows.append({"segment": k, "pre": pre, "post": post, "after": state,
                     "dv": float(np.linalg.norm(post.velocity - pre.velocity))})
    return rows


def match_defect(problem: SFProblem, decision: DecisionVector) -> MatchDefect:
    c = kernels.sft_defect(encode_decision(problem, decision), *problem.kernel_args())
    return MatchDefect(c[0:3], c[3:6], float(c[6]))


def objective(problem: SFProblem, decision: DecisionVector) -> float:
    """Minimization objective -m_f / m0."""
    return -decision.m_f / problem.m0


# --- inspection ---------------------------------------------------------------


def trajectory_rows(problem: SFProblem, decision: DecisionVector):
    """Per-segment impulse records sorted by epoch (for dumping/plotting)."""
    rows = _leg_states(problem, decision, FORWARD) + _leg_states(problem, decision, BACKWARD)
    out = []
    for row in sorted(rows, key=lambda r: r["segment"]):
        k = row["segment"]
        st = row["post"]
        out.append({
            "segment": k,
            "epoch_mjd": problem.epoch_mjd + (k + 0.5) * problem.tof / problem.n_segments,
            "x_au": st.position[0], "y_au": st.position[1], "z_au": st.position[2],
            "vx_kms": st.velocity[0] * VU_KMS, "vy_kms": st.velocity[1] * VU_KMS,
            "vz_kms": st.velocity[2] * VU_KMS,
            "mass_kg": st.mass,
            "dv_ms": row["dv"] * VU_MS,
        })
    return out


def dump_trajectory(problem: SFProblem, decision: DecisionVector, path) -> None:
    rows = trajectory_rows(problem, decision)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
