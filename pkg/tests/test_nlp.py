import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltfeas.astro import ClassicalElements, elements_to_state, kepler_propagate
from ltfeas.constants import DAY_S, G0, ISP_S, TU_DAYS, VU_MS
from ltfeas.nlp import SolveOptions, fd_gradient, solve
from ltfeas.sft import DecisionVector, SFProblem, decode_decision, encode_decision, match_defect

DEP = elements_to_state(ClassicalElements(2.2, 0.1, 0.1, 0.3, 0.5, 1.0))


def self_transfer(tof=400.0, m0=2000.0):
    arr = kepler_propagate(DEP, tof / TU_DAYS)
    return SFProblem(DEP.with_mass(m0), arr.pv, m0, tof)


def nearby_transfer(tof=500.0, m0=2200.0, da=0.03):
    """Rendezvous with a slightly larger orbit: reachable with a few hundred m/s."""
    target = elements_to_state(ClassicalElements(2.2 + da, 0.1, 0.1, 0.3, 0.5, 1.0))
    arr = kepler_propagate(target, tof / TU_DAYS)
    return SFProblem(DEP.with_mass(m0), arr.pv, m0, tof)


def test_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(feas_tol=0.0)
    with pytest.raises(ValueError):
        SolveOptions(penalty_growth=1.0)
    with pytest.raises(ValueError):
        SolveOptions(max_major_iters=0)


def test_fd_gradient_quadratic():
    g = fd_gradient(lambda x: float(x @ x), np.array([1.0, 2.0]))
    assert np.allclose(g, [2.0, 4.0], atol=1e-8)


def test_fd_gradient_affine_exact():
    a = np.array([0.5, -3.0, 7.25])
    g = fd_gradient(lambda x: float(a @ x) + 4.0, np.array([10.0, -0.3, 2.0]))
    assert np.allclose(g, a, rtol=1e-9, atol=1e-9)


def test_fd_gradient_does_not_mutate_input():
    x = np.array([1.0, 2.0])
    fd_gradient(lambda v: float(v.sum()), x)
    assert x.tolist() == [1.0, 2.0]


def test_fd_gradient_matches_richardson_oracle(rng):
    p = nearby_transfer()
    u = rng.uniform(-0.5, 0.5, size=(p.n_segments, 3))
    x = encode_decision(p, DecisionVector(u, 1900.0))

    def merit(z):
        c = match_defect(p, decode_decision(p, z)).as_array()
        return float(-z[-1] + 10.0 * (c @ c))

    g = fd_gradient(merit, x)
    f0 = merit(x)
    ref = np.empty_like(x)
    for j in range(x.size):
        h = 0.5e-7 * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = 1.0
        d1 = (merit(x + h * e) - f0) / h
        d2 = (merit(x + 0.5 * h * e) - f0) / (0.5 * h)
        ref[j] = 2.0 * d2 - d1
    scale = np.maximum(np.abs(ref), 1e-3 * np.max(np.abs(ref)))
    assert np.max(np.abs(g - ref) / scale) < 1e-4


def test_ballistic_self_transfer_converges_immediately():
    p = self_transfer()
    r = solve(p, DecisionVector.ballistic(p))
    assert r.converged
    assert r.major_iters <= 2
    assert r.final_mass == p.m0
    assert r.defect_norm < 1e-9


def test_mass_guess_driven_up_to_m0():
    p = self_transfer()
    r = solve(p, DecisionVector.ballistic(p, 0.9 * p.m0))
    assert r.converged
    assert abs(r.final_mass - p.m0) <= 1e-6 * p.m0


def test_one_day_transfer_is_unreachable():
    far = elements_to_state(ClassicalElements(3.2, 0.2, 0.3, 2.0, 1.0, 4.0))
    p = SFProblem(DEP.with_mass(2000.0), far.pv, 2000.0, 1.0)
    budget = p.n_segments * p.t_max * p.seg_dt * TU_DAYS * DAY_S / p.m_dry
    assert budget == pytest.approx(0.236 * DAY_S / 1000.0, rel=1e-12)  # ~20.4 m/s upper bound
    gap = np.linalg.norm(far.velocity - DEP.velocity) * VU_MS
    assert gap > 100 * budget
    r = solve(p, DecisionVector.ballistic(p))
    assert not r.converged
    assert r.defect_norm > 1e-3


def test_guess_outside_bounds_is_clamped():
    p = self_transfer()
    guess = DecisionVector(np.full((p.n_segments, 3), 0.0), p.m0)
    x = encode_decision(p, guess)
    x[0] = 5.0
    r = solve(p, decode_decision(p, x), SolveOptions(max_major_iters=3))
    assert np.all(np.abs(encode_decision(p, r.decision)[:-1]) <= 1.0)


def test_reachable_transfer_converges_and_is_consistent():
    p = nearby_transfer()
    dv = 0.0
    r = solve(p, DecisionVector.ballistic(p, p.m0 * math.exp(-dv / (ISP_S * G0))))
    assert r.converged, r.message
    assert r.defect_norm <= SolveOptions().feas_tol
    assert p.m_dry <= r.final_mass < p.m0
    assert np.all(np.linalg.norm(r.decision.controls, axis=1) <= 1.0 + 1e-6)
    assert match_defect(p, r.decision).norm_inf() == pytest.approx(r.defect_norm)
    assert r.objective_history[-1] == pytest.approx(-r.final_mass / p.m0)


def test_solve_is_deterministic():
    p = nearby_transfer(da=0.05)
    g = DecisionVector.ballistic(p, 0.95 * p.m0)
    a, b = solve(p, g), solve(p, g)
    assert a.converged == b.converged
    assert a.defect_history == b.defect_history
    assert np.array_equal(encode_decision(p, a.decision), encode_decision(p, b.decision))


@settings(max_examples=6, deadline=None)
@given(da=st.floats(-0.06, 0.06), tof=st.floats(300.0, 700.0), frac=st.floats(0.85, 1.0))
def test_defect_history_non_increasing_when_converged(da, tof, frac):
    p = nearby_transfer(tof=tof, da=da)
    r = solve(p, DecisionVector.ballistic(p, frac * p.m0))
    if r.converged:
        h = r.defect_history
        assert all(b <= a * 1.01 for a, b in zip(h, h[1:])), h
        assert r.defect_norm <= SolveOptions().feas_tol
