"""Pure-Python implementation of the hot numerical kernels.

This module mirrors ``_kernels.pyx`` function for function and is used
whenever the compiled extension is unavailable (or when
``LTFEAS_PURE_PYTHON=1`` is set).  Vectors are plain tuples/sequences of
floats; all quantities are in canonical units.
"""
import math

import numpy as np

from .errors import DegenerateGeometry, NumericalFailure

BACKEND = "python"

_TWO_PI = 2.0 * math.pi
_KEPLER_MAXITER = 100
_LAMBERT_MAXITER = 200


def stumpff(z):
    """Return the Stumpff functions (C(z), S(z))."""
    if abs(z) < 0.1:
        # series through z^6
        c = (0.5 - z * (1.0 / 24.0 - z * (1.0 / 720.0 - z * (1.0 / 40320.0 - z * (
            1.0 / 3628800.0 - z * (1.0 / 479001600.0 - z / 87178291200.0))))))
        s = (1.0 / 6.0 - z * (1.0 / 120.0 - z * (1.0 / 5040.0 - z * (1.0 / 362880.0 - z * (
            1.0 / 39916800.0 - z * (1.0 / 6227020800.0 - z / 1307674368000.0))))))
        return c, s
    if z > 0:
        sz = math.sqrt(z)
        half = math.sin(0.5 * sz)
        return 2.0 * half * half / z, (sz - math.sin(sz)) / (z * sz)
    sz = math.sqrt(-z)
    return (math.cosh(sz) - 1.0) / (-z), (math.sinh(sz) - sz) / (-z * sz)


def propagate(r, v, dt, mu=1.0):
    """Two-body propagation by universal variables (Laguerre-Conway)."""
    rx, ry, rz = r[0], r[1], r[2]
    vx, vy, vz = v[0], v[1], v[2]
    if dt == 0.0:
        return (rx, ry, rz), (vx, vy, vz)
    r0 = math.sqrt(rx * rx + ry * ry + rz * rz)
    v2 = vx * vx + vy * vy + vz * vz
    smu = math.sqrt(mu)
    sigma0 = (rx * vx + ry * vy + rz * vz) / smu
    alpha = 2.0 / r0 - v2 / mu
    tau = dt
    if alpha > 1e-12:
        period = _TWO_PI / (alpha * math.sqrt(alpha) * smu)
        tau = math.fmod(dt, period)
        chi = smu * tau * alpha
    elif alpha < -1e-12:
        a = 1.0 / alpha
        sgn = 1.0 if tau > 0 else -1.0
        arg = (-2.0 * mu * alpha * tau) / (
            sigma0 * smu + sgn * math.sqrt(-mu * a) * (1.0 - r0 * alpha))
        chi = sgn * math.sqrt(-a) * math.log(arg) if arg > 0 else smu * tau / r0
    else:
        chi = smu * tau / r0
    target = smu * tau
    one_m_ar0 = 1.0 - alpha * r0
    residual = math.inf
    u0 = u1 = u2 = 0.0
    for _ in range(_KEPLER_MAXITER):
        z = alpha * chi * chi
        c, s = stumpff(z)
        u2 = chi * chi * c
        u3 = chi * chi * chi * s
        u1 = chi - alpha * u3
        u0 = 1.0 - alpha * u2
        f = r0 * u1 + sigma0 * u2 + u3 - target
        fp = r0 * u0 + sigma0 * u1 + u2
        fpp = sigma0 * u0 + one_m_ar0 * u1
        residual = f
        n = 5.0
        disc = abs((n - 1) ** 2 * fp * fp - n * (n - 1) * f * fpp)
        denom = fp + math.copysign(math.sqrt(disc), fp)
        delta = n * f / denom
        chi -= delta
        if abs(delta) <= 1e-14 * max(1.0, abs(chi)):
            break
    else:
        raise NumericalFailure("universal-variable Kepler iteration did not converge", abs(residual))
    z = alpha * chi * chi
    c, s = stumpff(z)
    u2 = chi * chi * c
    u3 = chi * chi * chi * s
    u1 = chi - alpha * u3
    u0 = 1.0 - alpha * u2
    rn = r0 * u0 + sigma0 * u1 + u2
    f = 1.0 - u2 / r0
    g = (r0 * u1 + sigma0 * u2) / smu
    fd = -smu * u1 / (rn * r0)
    gd = 1.0 - u2 / rn
    return ((f * rx + g * vx, f * ry + g * vy, f * rz + g * vz),
            (fd * rx + gd * vx, fd * ry + gd * vy, fd * rz + gd * vz))


def _lambert_tof(z, r1n, r2n, a_par, smu, alpha):
    """Return (y, tof) for the universal-variable Lambert function."""
    c, s = stumpff(z)
    if z > 0.0:
        # y = r1 + r2 - 2 sqrt(r1 r2) cos(alpha) cos(beta), written as a sum of
        # squares so it keeps full precision near a whole revolution
        beta = 0.5 * math.sqrt(z)
        u = math.sin(0.5 * (alpha - beta))
        w = math.sin(0.5 * (alpha + beta))
        d = math.sqrt(r1n) - math.sqrt(r2n)
        y = d * d + 2.0 * math.sqrt(r1n * r2n) * (u * u + w * w)
    else:
        y = r1n + r2n + a_par * (z * s - 1.0) / math.sqrt(c)
    if y <= 0.0:
        return y, -math.inf
    x = math.sqrt(y / c)
    return y, (x * x * x * s + a_par * math.sqrt(y)) / smu


def lambert(r1, r2, tof, mu=1.0, prograde=True):
    """Zero-revolution Lambert solution by bracketed universal-variable search."""
    if not tof > 0.0:
        raise ValueError("time of flight must be positive")
    r1x, r1y, r1z = r1[0], r1[1], r1[2]
    r2x, r2y, r2z = r2[0], r2[1], r2[2]
    r1n = math.sqrt(r1x * r1x + r1y * r1y + r1z * r1z)
    r2n = math.sqrt(r2x * r2x + r2y * r2y + r2z * r2z)
    cx = r1y * r2z - r1z * r2y
    cy = r1z * r2x - r1x * r2z
    cz = r1x * r2y - r1y * r2x
    cross_n = math.sqrt(cx * cx + cy * cy + cz * cz)
    dot = r1x * r2x + r1y * r2y + r1z * r2z
    theta = math.atan2(cross_n, dot)
    if theta < 1e-10 or math.pi - theta < 1e-10:
        raise DegenerateGeometry(f"transfer angle {theta:.3e} rad is degenerate")
    if (cz < 0.0) == prograde:
        theta = _TWO_PI - theta
    alpha = 0.5 * theta
    a_par = math.sqrt(2.0 * r1n * r2n) * math.cos(alpha)
    smu = math.sqrt(mu)

    z_hi = 4.0 * math.pi * math.pi * (1.0 - 1e-12)
    z_lo = -4.0 * math.pi * math.pi
    for _ in range(60):
        y, t = _lambert_tof(z_lo, r1n, r2n, a_par, smu, alpha)
        if t < tof:
            break
        z_lo *= 2.0
    else:
        raise NumericalFailure("Lambert bracket search failed", tof)
    z = 0.5 * (z_lo + z_hi)
    residual = math.inf
    for _ in range(_LAMBERT_MAXITER):
        y, t = _lambert_tof(z, r1n, r2n, a_par, smu, alpha)
        residual = t - tof
        if t < tof:
            z_lo = z
        else:
            z_hi = z
        if abs(residual) <= 1e-14 * tof or z_hi - z_lo <= 1e-15 * max(1.0, abs(z)):
            break
        z_new = z
        if y > 0.0:
            # Newton step on t(z), falling back to bisection outside the bracket
            c, s = stumpff(z)
            if abs(z) > 1e-8:
                dt = ((y / c) ** 1.5 * (0.5 / z * (c - 1.5 * s / c) + 0.75 * s * s / c)
                      + a_par / 8.0 * (3.0 * s / c * math.sqrt(y) + a_par * math.sqrt(c / y)))
            else:
                dt = (math.sqrt(2.0) / 40.0 * y**1.5
                      + a_par / 8.0 * (math.sqrt(y) + a_par * math.sqrt(0.5 / y)))
            dt /= smu
            if dt > 0.0:
                z_new = z - residual / dt
        if not (z_lo < z_new < z_hi) or z_new == z:
            z_new = 0.5 * (z_lo + z_hi)
        z = z_new
    else:
        if abs(residual) > 1e-9 * tof:
            raise NumericalFailure("Lambert iteration did not converge", abs(residual))
    y, t = _lambert_tof(z, r1n, r2n, a_par, smu, alpha)
    f = 1.0 - y / r1n
    g = a_par * math.sqrt(y / mu)
    gd = 1.0 - y / r2n
    v1 = ((r2x - f * r1x) / g, (r2y - f * r1y) / g, (r2z - f * r1z) / g)
    v2 = ((gd * r2x - r1x) / g, (gd * r2y - r1y) / g, (gd * r2z - r1z) / g)
    return v1, v2


# --- Sims-Flanagan legs -----------------------------------------------------
#
# Decision layout: x[3k:3k+3] = unit control of segment k, x[3n] = m_f / m0.
# Masses are normalized by m0; ``thrust`` is T_max / (m0 * acc_unit) and
# ``ve`` the exhaust velocity, both canonical.  Backward impulses recover
# the pre-impulse mass from the rocket equation so that a backward kick
# undoes a forward kick exactly.


def _kick_fwd(v, m, ux, uy, uz, thrust, seg_dt, ve):
    un = math.sqrt(ux * ux + uy * uy + uz * uz)
    if un == 0.0:
        return v, m
    k = thrust * seg_dt / m
    dv = k * un
    return (v[0] + k * ux, v[1] + k * uy, v[2] + k * uz), m * math.exp(-dv / ve)


def _pre_impulse_mass(m_post, c):
    """Solve m_post = w * exp(-c / w) for the pre-impulse mass w."""
    w = m_post * math.exp(c / m_post)
    for _ in range(30):
        ex = math.exp(-c / w)
        resid = w * ex - m_post
        w -= resid / (ex * (1.0 + c / w))
        if abs(resid) <= 1e-16 * m_post:
            break
    return w


def _kick_bwd(v, m, ux, uy, uz, thrust, seg_dt, ve):
    """Exact inverse of :func:`_kick_fwd` given the post-impulse mass."""
    un = math.sqrt(ux * ux + uy * uy + uz * uz)
    if un == 0.0:
        return v, m
    w = _pre_impulse_mass(m, thrust * seg_dt * un / ve)
    k = thrust * seg_dt / w
    return (v[0] - k * ux, v[1] - k * uy, v[2] - k * uz), w


def _fwd_from(r, v, m, x, k0, nf, seg_dt, thrust, ve, mu):
    """Continue the forward leg from the pre-impulse state of segment k0."""
    h = 0.5 * seg_dt
    for k in range(k0, nf):
        v, m = _kick_fwd(v, m, x[3 * k], x[3 * k + 1], x[3 * k + 2], thrust, seg_dt, ve)
        r, v = propagate(r, v, 2.0 * h if k < nf - 1 else h, mu)
    return r, v, m


def _bwd_from(r, v, m, x, k0, nf, seg_dt, thrust, ve, mu):
    """Continue the backward leg from the post-impulse state of segment k0."""
    h = 0.5 * seg_dt
    for k in range(k0, nf - 1, -1):
        v, m = _kick_bwd(v, m, x[3 * k], x[3 * k + 1], x[3 * k + 2], thrust, seg_dt, ve)
        r, v = propagate(r, v, -2.0 * h if k > nf else -h, mu)
    return r, v, m


def _legs(x, dep, arr, n, seg_dt, thrust, ve, mu, store):
    nf = (n + 1) // 2
    h = 0.5 * seg_dt
    r, v = propagate(dep[0:3], dep[3:6], h, mu)
    m = 1.0
    for k in range(nf):
        if store is not None:
            store[k] = (r, v, m)
        v, m = _kick_fwd(v, m, x[3 * k], x[3 * k + 1], x[3 * k + 2], thrust, seg_dt, ve)
        r, v = propagate(r, v, 2.0 * h if k < nf - 1 else h, mu)
    fwd = (r, v, m)
    r, v = propagate(arr[0:3], arr[3:6], -h, mu)
    m = x[3 * n]
    for k in range(n - 1, nf - 1, -1):
        if store is not None:
            store[k] = (r, v, m)
        v, m = _kick_bwd(v, m, x[3 * k], x[3 * k + 1], x[3 * k + 2], thrust, seg_dt, ve)
        r, v = propagate(r, v, -2.0 * h if k > nf else -h, mu)
    return fwd, (r, v, m)


def _defect(fwd, bwd):
    rf, vf, mf = fwd
    rb, vb, mb = bwd
    return np.array([rf[0] - rb[0], rf[1] - rb[1], rf[2] - rb[2],
                     vf[0] - vb[0], vf[1] - vb[1], vf[2] - vb[2], mf - mb])


def sft_defect(x, dep, arr, n, seg_dt, thrust, ve, mu=1.0):
    """Match-point defect [dp, dv, dm] for the flat decision ``x``."""
    x = [float(t) for t in x]
    dep = [float(t) for t in dep]
    arr = [float(t) for t in arr]
    fwd, bwd = _legs(x, dep, arr, n, seg_dt, thrust, ve, mu, None)
    return _defect(fwd, bwd)


def sft_jacobian(x, dep, arr, n, seg_dt, thrust, ve, fd_step=1e-7, mu=1.0):
    """Defect and its central-difference Jacobian.

    Each column only re-propagates the part of the leg downstream of the
    perturbed variable.
    """
    x = [float(t) for t in x]
    dep = [float(t) for t in dep]
    arr = [float(t) for t in arr]
    nf = (n + 1) // 2
    nx = 3 * n + 1
    store = [None] * n
    fwd, bwd = _legs(x, dep, arr, n, seg_dt, thrust, ve, mu, store)
    c = _defect(fwd, bwd)
    jac = np.empty((7, nx))
    for j in range(nx):
        xj = x[j]
        step = fd_step * max(1.0, abs(xj))
        cols = []
        for sgn in (1.0, -1.0):
            x[j] = xj + sgn * step
            if j == 3 * n:
                r, v, _ = store[n - 1]
                side = _defect(fwd, _bwd_from(r, v, x[j], x, n - 1, nf, seg_dt, thrust, ve, mu))
            else:
                k = j // 3
                r, v, m = store[k]
                if k < nf:
                    side = _defect(_fwd_from(r, v, m, x, k, nf, seg_dt, thrust, ve, mu), bwd)
                else:
                    side = _defect(fwd, _bwd_from(r, v, m, x, k, nf, seg_dt, thrust, ve, mu))
            cols.append(side)
        x[j] = xj
        jac[:, j] = (cols[0] - cols[1]) / (2.0 * step)
    return c, jac
