"""Two-body astrodynamics: propagation, element/frame conversions, Lambert
solutions and catalog-backed ephemerides.

Everything here works in canonical units (AU, TU with mu = 1) unless a
function name says otherwise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .constants import MU, TU_DAYS
from .errors import NumericalFailure, UnsupportedOrbit

TWO_PI = 2.0 * math.pi

CATALOG_HEADER = ["id", "name", "epoch_mjd", "a_au", "e", "i_deg", "raan_deg", "argp_deg", "M0_deg"]


def wrap_2pi(angle):
    """Wrap to [0, 2*pi)."""
    out = np.mod(angle, TWO_PI)
    if np.ndim(out) == 0:
        out = float(out)
        return 0.0 if out >= TWO_PI else out
    out[out >= TWO_PI] = 0.0
    return out


def wrap_pi(angle):
    """Wrap to (-pi, pi]."""
    out = TWO_PI * np.floor((np.pi - np.asarray(angle, dtype=float)) / TWO_PI) + angle
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class StateVector:
    position: np.ndarray
    velocity: np.ndarray
    mass: float = 1.0

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        v = np.array(self.velocity, dtype=float).reshape(3)
        p.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "velocity", v)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
            raise ValueError("state must be finite")
        if not np.linalg.norm(p) > 0.0:
            raise ValueError("position must be non-zero")
        if not self.mass > 0.0:
            raise ValueError("mass must be positive")

    @property
    def pv(self):
        return np.concatenate([self.position, self.velocity])

    def with_mass(self, mass):
        return StateVector(self.position, self.velocity, mass)


@dataclass(frozen=True)
class ClassicalElements:
    a: float
    e: float
    i: float
    raan: float
    argp: float
    nu: float

    def as_array(self):
        return np.array([self.a, self.e, self.i, self.raan, self.argp, self.nu])


@dataclass(frozen=True)
class EquinoctialElements:
    p_sl: float
    f: float
    g: float
    h: float
    k: float
    L: float

    def as_array(self):
        return np.array([self.p_sl, self.f, self.g, self.h, self.k, self.L])


@dataclass(frozen=True)
class BodyRecord:
    """Catalog body; ``elements.nu`` holds the mean anomaly M0 at ``epoch_mjd``."""

    id: int
    name: str
    epoch_mjd: float
    elements: ClassicalElements = field(repr=False)

    def __post_init__(self):
        if not (0.0 <= self.elements.e < 1.0 and self.elements.a > 0.0):
            raise UnsupportedOrbit(f"catalog body {self.id} is not elliptic")


# --- propagation --------------------------------------------------------------


def kepler_propagate(state: StateVector, dt: float, mu: float = MU) -> StateVector:
    """Propagate a two-body state by ``dt`` canonical time units (may be negative)."""
    if dt == 0.0:
        return state
    r, v = kernels.propagate(state.position, state.velocity, float(dt), mu)
    return StateVector(r, v, state.mass)


# --- element conversions ------------------------------------------------------


def _rotation(raan, i, argp):
    """Perifocal -> inertial rotation matrix."""
    cO, sO = math.cos(raan), math.sin(raan)
    ci, si = math.cos(i), math.sin(i)
    cw, sw = math.cos(argp), math.sin(argp)
    return np.array([
        [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
        [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
        [sw * si, cw * si, ci],
    ])


def elements_to_state(coe: ClassicalElements, mu: float = MU, mass: float = 1.0) -> StateVector:
    if abs(coe.e - 1.0) < 1e-12:
        raise UnsupportedOrbit("parabolic orbits are not supported")
    p = coe.a * (1.0 - coe.e * coe.e)
    cn, sn = math.cos(coe.nu), math.sin(coe.nu)
    rad = p / (1.0 + coe.e * cn)
    r_pf = np.array([rad * cn, rad * sn, 0.0])
    v_pf = math.sqrt(mu / p) * np.array([-sn, coe.e + cn, 0.0])
    rot = _rotation(coe.raan, coe.i, coe.argp)
    return StateVector(rot @ r_pf, rot @ v_pf, mass)


def _signed_angle(ref, vec, axis):
    return math.atan2(float(np.dot(np.cross(ref, vec), axis)), float(np.dot(ref, vec)))


def state_to_elements(state: StateVector, mu: float = MU) -> ClassicalElements:
    """Inverse of :func:`elements_to_state`.

    Singular sets follow the usual conventions: for equatorial orbits the
    node line is taken along +x (raan = 0), for circular orbits argp = 0
    and ``nu`` is measured from the node line.
    """
    r = state.position
    v = state.velocity
    rn = float(np.linalg.norm(r))
    h = np.cross(r, v)
    hn = float(np.linalg.norm(h))
    if hn == 0.0:
        raise UnsupportedOrbit("rectilinear orbit has no orbital plane")
    h_hat = h / hn
    e_vec = ((v @ v - mu / rn) * r - (r @ v) * v) / mu
    e = float(np.linalg.norm(e_vec))
    if abs(e - 1.0) < 1e-12:
        raise UnsupportedOrbit("parabolic orbits are not supported")
    energy = 0.5 * float(v @ v) - mu / rn
    a = -mu / (2.0 * energy)
    i = math.acos(max(-1.0, min(1.0, h_hat[2])))
    node = np.array([-h[1], h[0], 0.0])
    node_n = float(np.linalg.norm(node))
    if node_n > 1e-11 * hn:
        node_hat = node / node_n
        raan = math.atan2(node_hat[1], node_hat[0])
    else:
        node_hat = np.array([1.0, 0.0, 0.0])
        raan = 0.0
    if e > 1e-11:
        argp = _signed_angle(node_hat, e_vec, h_hat)
        nu = _signed_angle(e_vec, r, h_hat)
    else:
        argp = 0.0
        nu = _signed_angle(node_hat, r, h_hat)
    return ClassicalElements(a, e, i, wrap_2pi(raan), wrap_2pi(argp), wrap_2pi(nu))


def coe_to_mee(coe: ClassicalElements) -> EquinoctialElements:
    lp = coe.raan + coe.argp
    t = math.tan(0.5 * coe.i)
    return EquinoctialElements(
        coe.a * (1.0 - coe.e**2),
        coe.e * math.cos(lp),
        coe.e * math.sin(lp),
        t * math.cos(coe.raan),
        t * math.sin(coe.raan),
        wrap_2pi(lp + coe.nu),
    )


def mee_to_coe(mee: EquinoctialElements) -> ClassicalElements:
    e = math.hypot(mee.f, mee.g)
    a = mee.p_sl / (1.0 - e * e)
    i = 2.0 * math.atan(math.hypot(mee.h, mee.k))
    raan = math.atan2(mee.k, mee.h) if i > 0.0 else 0.0
    lp = math.atan2(mee.g, mee.f) if e > 0.0 else raan
    return ClassicalElements(a, e, i, wrap_2pi(raan), wrap_2pi(lp - raan), wrap_2pi(mee.L - lp))


def mee_to_state(mee: EquinoctialElements, mu: float = MU, mass: float = 1.0) -> StateVector:
    p, f, g, h, k, L = mee.p_sl, mee.f, mee.g, mee.h, mee.k, mee.L
    cL, sL = math.cos(L), math.sin(L)
    alpha2 = h * h - k * k
    s2 = 1.0 + h * h + k * k
    w = 1.0 + f * cL + g * sL
    r = p / w
    sm = math.sqrt(mu / p)
    pos = (r / s2) * np.array([
        cL + alpha2 * cL + 2.0 * h * k * sL,
        sL - alpha2 * sL + 2.0 * h * k * cL,
        2.0 * (h * sL - k * cL),
    ])
    vel = (-sm / s2) * np.array([
        sL + alpha2 * sL - 2.0 * h * k * cL + g - 2.0 * f * h * k + alpha2 * g,
        -cL + alpha2 * cL + 2.0 * h * k * sL - f + 2.0 * g * h * k + alpha2 * f,
        -2.0 * (h * cL + k * sL + f * h + g * k),
    ])
    return StateVector(pos, vel, mass)


def state_to_mee(state: StateVector, mu: float = MU) -> EquinoctialElements:
    return coe_to_mee(state_to_elements(state, mu))


# --- coordinate frames --------------------------------------------------------


def to_spherical(state: StateVector):
    """(r, azimuth, elevation, v_r, v_az, v_el); azimuth from +x, elevation from the xy-plane."""
    x, y, z = state.position.tolist()
    r = math.sqrt(x * x + y * y + z * z)
    az = wrap_2pi(math.atan2(y, x))
    el = math.atan2(z, math.hypot(x, y))
    ca, sa, ce, se = math.cos(az), math.sin(az), math.cos(el), math.sin(el)
    v = state.velocity.tolist()
    return (r, az, el,
            ce * ca * v[0] + ce * sa * v[1] + se * v[2],
            -sa * v[0] + ca * v[1],
            -se * ca * v[0] - se * sa * v[1] + ce * v[2])


def from_spherical(sph, mass: float = 1.0) -> StateVector:
    r, az, el, vr, vaz, vel = sph
    ca, sa, ce, se = math.cos(az), math.sin(az), math.cos(el), math.sin(el)
    e_r = np.array([ce * ca, ce * sa, se])
    e_az = np.array([-sa, ca, 0.0])
    e_el = np.array([-se * ca, -se * sa, ce])
    return StateVector(r * e_r, vr * e_r + vaz * e_az + vel * e_el, mass)


def to_cylindrical(state: StateVector):
    """(rho, theta, z, v_rho, v_theta, v_z); theta measured from +x."""
    x, y, z = state.position.tolist()
    th = wrap_2pi(math.atan2(y, x))
    c, s = math.cos(th), math.sin(th)
    v = state.velocity.tolist()
    return (math.hypot(x, y), th, z, c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2])


def from_cylindrical(cyl, mass: float = 1.0) -> StateVector:
    rho, th, z, vrho, vth, vz = cyl
    c, s = math.cos(th), math.sin(th)
    return StateVector([rho * c, rho * s, z], [vrho * c - vth * s, vrho * s + vth * c, vz], mass)


def state_to_frames(state: StateVector, mu: float = MU):
    return {
        "mee": state_to_mee(state, mu),
        "spherical": to_spherical(state),
        "cylindrical": to_cylindrical(state),
    }


def orbit_scalars(state: StateVector, mu: float = MU):
    p, v = state.position, state.velocity
    r = float(np.linalg.norm(p))
    return {
        "h_mag": float(np.linalg.norm(np.cross(p, v))),
        "energy": 0.5 * float(v @ v) - mu / r,
        "r_sun": r,
    }


# --- Lambert ------------------------------------------------------------------


def lambert_solve(r1, r2, tof: float, prograde: bool = True, mu: float = MU):
    """Zero-revolution Lambert arc from r1 to r2 in ``tof``; returns (v1, v2).

    Raises DegenerateGeometry for transfer angles within 1e-10 of 0 or pi.
    """
    v1, v2 = kernels.lambert(r1, r2, float(tof), mu, prograde)
    return np.array(v1), np.array(v2)


# --- ephemerides --------------------------------------------------------------


def solve_kepler(mean_anomaly: float, e: float, max_iter: int = 50, tol: float = 1e-15) -> float:
    """Eccentric anomaly from mean anomaly (elliptic)."""
    M = math.fmod(mean_anomaly, TWO_PI)
    E = M if e < 0.8 else math.pi * (1.0 if M >= 0 else -1.0)
    resid = math.inf
    for _ in range(max_iter):
        resid = E - e * math.sin(E) - M
        step = resid / (1.0 - e * math.cos(E))
        E -= step
        if abs(step) <= tol * max(1.0, abs(E)):
            return E
    raise NumericalFailure("Kepler's equation did not converge", abs(resid))


def ephemeris_at(body: BodyRecord, epoch_mjd: float, mu: float = MU) -> StateVector:
    """Keplerian state of a catalog body at ``epoch_mjd``."""
    if not math.isfinite(epoch_mjd):
        raise ValueError("epoch must be finite")
    el = body.elements
    n = math.sqrt(mu / el.a**3)
    M = el.nu + n * (epoch_mjd - body.epoch_mjd) / TU_DAYS
    E = solve_kepler(M, el.e)
    nu = 2.0 * math.atan2(math.sqrt(1.0 + el.e) * math.sin(0.5 * E),
                          math.sqrt(1.0 - el.e) * math.cos(0.5 * E))
    return elements_to_state(ClassicalElements(el.a, el.e, el.i, el.raan, el.argp, nu), mu)


def body_elements_at(body: BodyRecord, epoch_mjd: float) -> ClassicalElements:
    """Classical elements (with true anomaly) of a body at ``epoch_mjd``."""
    return state_to_elements(ephemeris_at(body, epoch_mjd))


def orbital_period_days(body: BodyRecord, mu: float = MU) -> float:
    return TWO_PI * math.sqrt(body.elements.a**3 / mu) * TU_DAYS


# --- catalog file -------------------------------------------------------------


def load_catalog(path) -> dict[int, BodyRecord]:
    bodies = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CATALOG_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"catalog {path} is missing columns {sorted(missing)}")
        for row in reader:
            deg = math.radians
            el = ClassicalElements(
                float(row["a_au"]), float(row["e"]), deg(float(row["i_deg"])),
                deg(float(row["raan_deg"])), deg(float(row["argp_deg"])), deg(float(row["M0_deg"])),
            )
            body = BodyRecord(int(row["id"]), row["name"], float(row["epoch_mjd"]), el)
            bodies[body.id] = body
    return bodies


def save_catalog(bodies, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CATALOG_HEADER)
        for b in sorted(bodies.values() if isinstance(bodies, dict) else bodies, key=lambda b: b.id):
            el = b.elements
            writer.writerow([b.id, b.name, repr(b.epoch_mjd), repr(el.a), repr(el.e),
                             repr(math.degrees(el.i)), repr(math.degrees(el.raan)),
                             repr(math.degrees(el.argp)), repr(math.degrees(el.nu))])
