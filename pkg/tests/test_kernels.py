import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltfeas import _kernels_py, kernels
from ltfeas.errors import DegenerateGeometry

from conftest import _compiled

needs_compiled = pytest.mark.skipif(_compiled is None, reason="compiled extension not built")


def test_backend_selected_at_import():
    assert kernels.BACKEND in ("cython", "python")
    if _compiled is not None:
        assert kernels.BACKEND == _compiled.BACKEND


@pytest.mark.parametrize("z", [-50.0, -1.0, -0.05, 0.0, 1e-9, 0.05, 0.3, 4.0, 30.0])
def test_stumpff_against_closed_form(backend, z):
    c, s = backend.stumpff(z)
    if abs(z) < 1e-6:
        assert c == pytest.approx(0.5, abs=1e-9)
        assert s == pytest.approx(1 / 6, abs=1e-9)
    elif z > 0:
        sz = math.sqrt(z)
        assert c == pytest.approx((1 - math.cos(sz)) / z, rel=1e-12, abs=1e-15)
        assert s == pytest.approx((sz - math.sin(sz)) / sz**3, rel=1e-9)
    else:
        sz = math.sqrt(-z)
        assert c == pytest.approx((math.cosh(sz) - 1) / -z, rel=1e-12)
        assert s == pytest.approx((math.sinh(sz) - sz) / sz**3, rel=1e-9)


def test_stumpff_series_branch_is_continuous(backend):
    for edge in (0.1, -0.1):
        a = backend.stumpff(edge * (1 - 1e-12))
        b = backend.stumpff(edge * (1 + 1e-12))
        assert a == pytest.approx(b, rel=1e-12)


def test_propagate_circular_half_period(backend):
    r, v = backend.propagate((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), math.pi)
    assert np.allclose(r, (-1, 0, 0), atol=1e-10)
    assert np.allclose(v, (0, -1, 0), atol=1e-10)


def test_propagate_hyperbolic_energy(backend):
    r0, v0 = np.array([1.0, 0.2, 0.0]), np.array([0.1, 1.6, 0.05])
    r, v = backend.propagate(r0, v0, 3.0)
    e0 = 0.5 * v0 @ v0 - 1 / np.linalg.norm(r0)
    e1 = 0.5 * np.dot(v, v) - 1 / np.linalg.norm(r)
    assert e1 == pytest.approx(e0, rel=1e-11)
    rb, vb = backend.propagate(r, v, -3.0)
    assert np.allclose(rb, r0, atol=1e-10) and np.allclose(vb, v0, atol=1e-10)


def test_lambert_degenerate(backend):
    with pytest.raises(DegenerateGeometry):
        backend.lambert((1.0, 0, 0), (2.0, 0, 0), 1.0)
    with pytest.raises(DegenerateGeometry):
        backend.lambert((1.0, 0, 0), (-2.0, 1e-12, 0), 1.0)


def _sft_case(rng, n=6):
    dep = np.array([1.0, 0.1, 0.02, -0.05, 1.0, 0.01])
    arr = np.array([-0.4, 1.3, 0.05, -0.85, -0.25, 0.0])
    x = np.concatenate([rng.uniform(-0.5, 0.5, 3 * n), [0.8]])
    return x, dep, arr, n, 0.4, 0.05, 0.7


@needs_compiled
def test_backends_bit_identical_propagate_lambert(rng):
    for _ in range(200):
        r = rng.normal(size=3) + np.array([1.5, 0, 0])
        v = rng.normal(scale=0.3, size=3) + np.array([0, 0.8, 0])
        dt = float(rng.uniform(-10, 10))
        a = _kernels_py.propagate(r, v, dt)
        b = _compiled.propagate(r, v, dt)
        assert tuple(a[0]) == tuple(b[0]) and tuple(a[1]) == tuple(b[1])
        r2 = rng.normal(size=3) + np.array([0, 2.0, 0])
        tof = float(rng.uniform(0.5, 8))
        try:
            la = _kernels_py.lambert(r, r2, tof)
        except DegenerateGeometry:
            continue
        lb = _compiled.lambert(r, r2, tof)
        assert tuple(la[0]) == tuple(lb[0]) and tuple(la[1]) == tuple(lb[1])


@needs_compiled
def test_backends_bit_identical_sft(rng):
    args = _sft_case(rng)
    assert np.array_equal(_kernels_py.sft_defect(*args), _compiled.sft_defect(*args))
    ca, ja = _kernels_py.sft_jacobian(*args)
    cb, jb = _compiled.sft_jacobian(*args)
    assert np.array_equal(ca, cb) and np.array_equal(ja, jb)


def test_sft_jacobian_matches_plain_central_differences(backend, rng):
    x, *rest = _sft_case(rng)
    c, jac = backend.sft_jacobian(x, *rest, fd_step=1e-7)
    assert np.array_equal(c, backend.sft_defect(x, *rest))
    for j in range(x.size):
        h = 1e-7 * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        col = (backend.sft_defect(xp, *rest) - backend.sft_defect(xm, *rest)) / (2 * h)
        assert np.allclose(jac[:, j], col, rtol=1e-6, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(dt1=st.floats(-20, 20), dt2=st.floats(-20, 20))
def test_propagation_composes(dt1, dt2):
    r0, v0 = (1.2, 0.1, 0.05), (-0.1, 0.85, 0.1)
    r1, v1 = kernels.propagate(r0, v0, dt1)
    r2, v2 = kernels.propagate(r1, v1, dt2)
    r3, v3 = kernels.propagate(r0, v0, dt1 + dt2)
    assert np.allclose(r2, r3, atol=1e-9) and np.allclose(v2, v3, atol=1e-9)
