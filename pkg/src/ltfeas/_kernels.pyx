# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: universal-variable Kepler propagation, Lambert
solver and Sims-Flanagan match-point defect/Jacobian.

Mirrors ``_kernels_py`` exactly; see that module for the contracts.
"""
from libc.math cimport pow, sqrt, sin, cos, sinh, cosh, exp, log, fabs, fmod, atan2, copysign, INFINITY, M_PI

import numpy as np
cimport numpy as cnp

from .errors import DegenerateGeometry, NumericalFailure

cnp.import_array()

BACKEND = "cython"

cdef double TWO_PI = 2.0 * M_PI
cdef int KEPLER_MAXITER = 100
cdef int LAMBERT_MAXITER = 200


cdef inline void _stumpff(double z, double* c, double* s) noexcept nogil:
    cdef double sz, half
    if fabs(z) < 0.1:
        c[0] = (0.5 - z * (1.0 / 24.0 - z * (1.0 / 720.0 - z * (1.0 / 40320.0 - z * (
            1.0 / 3628800.0 - z * (1.0 / 479001600.0 - z / 87178291200.0))))))
        s[0] = (1.0 / 6.0 - z * (1.0 / 120.0 - z * (1.0 / 5040.0 - z * (1.0 / 362880.0 - z * (
            1.0 / 39916800.0 - z * (1.0 / 6227020800.0 - z / 1307674368000.0))))))
    elif z > 0:
        sz = sqrt(z)
        half = sin(0.5 * sz)
        c[0] = 2.0 * half * half / z
        s[0] = (sz - sin(sz)) / (z * sz)
    else:
        sz = sqrt(-z)
        c[0] = (cosh(sz) - 1.0) / (-z)
        s[0] = (sinh(sz) - sz) / (-z * sz)


def stumpff(double z):
    cdef double c, s
    _stumpff(z, &c, &s)
    return c, s


cdef int _propagate(const double* r, const double* v, double dt, double mu,
                    double* ro, double* vo, double* resid) noexcept nogil:
    """Returns 0 on success, 1 on non-convergence (residual in resid)."""
    cdef double r0, v2, smu, sigma0, alpha, tau, period, a, sgn, arg, chi
    cdef double target, one_m_ar0, z, c, s, u0, u1, u2, u3, f, fp, fpp
    cdef double disc, denom, delta, rn, g, fd, gd
    cdef double n = 5.0
    cdef int it
    cdef int ok = 0
    if dt == 0.0:
        ro[0] = r[0]; ro[1] = r[1]; ro[2] = r[2]
        vo[0] = v[0]; vo[1] = v[1]; vo[2] = v[2]
        return 0
    r0 = sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
    smu = sqrt(mu)
    sigma0 = (r[0] * v[0] + r[1] * v[1] + r[2] * v[2]) / smu
    alpha = 2.0 / r0 - v2 / mu
    tau = dt
    if alpha > 1e-12:
        period = TWO_PI / (alpha * sqrt(alpha) * smu)
        tau = fmod(dt, period)
        chi = smu * tau * alpha
    elif alpha < -1e-12:
        a = 1.0 / alpha
        sgn = 1.0 if tau > 0 else -1.0
        arg = (-2.0 * mu * alpha * tau) / (sigma0 * smu + sgn * sqrt(-mu * a) * (1.0 - r0 * alpha))
        if arg > 0:
            chi = sgn * sqrt(-a) * log(arg)
        else:
            chi = smu * tau / r0
    else:
        chi = smu * tau / r0
    target = smu * tau
    one_m_ar0 = 1.0 - alpha * r0
    resid[0] = INFINITY
    for it in range(KEPLER_MAXITER):
        z = alpha * chi * chi
        _stumpff(z, &c, &s)
        u2 = chi * chi * c
        u3 = chi * chi * chi * s
        u1 = chi - alpha * u3
        u0 = 1.0 - alpha * u2
        f = r0 * u1 + sigma0 * u2 + u3 - target
        fp = r0 * u0 + sigma0 * u1 + u2
        fpp = sigma0 * u0 + one_m_ar0 * u1
        resid[0] = f
        disc = fabs((n - 1) * (n - 1) * fp * fp - n * (n - 1) * f * fpp)
        denom = fp + copysign(sqrt(disc), fp)
        delta = n * f / denom
        chi -= delta
        if fabs(delta) <= 1e-14 * (fabs(chi) if fabs(chi) > 1.0 else 1.0):
            ok = 1
            break
    if not ok:
        resid[0] = fabs(resid[0])
        return 1
    z = alpha * chi * chi
    _stumpff(z, &c, &s)
    u2 = chi * chi * c
    u3 = chi * chi * chi * s
    u1 = chi - alpha * u3
    u0 = 1.0 - alpha * u2
    rn = r0 * u0 + sigma0 * u1 + u2
    f = 1.0 - u2 / r0
    g = (r0 * u1 + sigma0 * u2) / smu
    fd = -smu * u1 / (rn * r0)
    gd = 1.0 - u2 / rn
    ro[0] = f * r[0] + g * v[0]
    ro[1] = f * r[1] + g * v[1]
    ro[2] = f * r[2] + g * v[2]
    vo[0] = fd * r[0] + gd * v[0]
    vo[1] = fd * r[1] + gd * v[1]
    vo[2] = fd * r[2] + gd * v[2]
    return 0


def propagate(r, v, double dt, double mu=1.0):
    cdef double ri[3]
    cdef double vi[3]
    cdef double ro[3]
    cdef double vo[3]
    cdef double resid = 0.0
    ri[0] = r[0]; ri[1] = r[1]; ri[2] = r[2]
    vi[0] = v[0]; vi[1] = v[1]; vi[2] = v[2]
    if _propagate(ri, vi, dt, mu, ro, vo, &resid):
        raise NumericalFailure("universal-variable Kepler iteration did not converge", resid)
    return (ro[0], ro[1], ro[2]), (vo[0], vo[1], vo[2])


cdef inline void _lambert_tof(double z, double r1n, double r2n, double a_par, double smu,
                              double alpha, double* y, double* t) noexcept nogil:
    cdef double c, s, x, beta, u, w, d
    _stumpff(z, &c, &s)
    if z > 0.0:
        # sum-of-squares form of r1 + r2 - 2 sqrt(r1 r2) cos(alpha) cos(beta)
        beta = 0.5 * sqrt(z)
        u = sin(0.5 * (alpha - beta))
        w = sin(0.5 * (alpha + beta))
        d = sqrt(r1n) - sqrt(r2n)
        y[0] = d * d + 2.0 * sqrt(r1n * r2n) * (u * u + w * w)
    else:
        y[0] = r1n + r2n + a_par * (z * s - 1.0) / sqrt(c)
    if y[0] <= 0.0:
        t[0] = -INFINITY
        return
    x = sqrt(y[0] / c)
    t[0] = (x * x * x * s + a_par * sqrt(y[0])) / smu


def lambert(r1, r2, double tof, double mu=1.0, bint prograde=True):
    cdef double r1x = r1[0], r1y = r1[1], r1z = r1[2]
    cdef double r2x = r2[0], r2y = r2[1], r2z = r2[2]
    cdef double r1n, r2n, cx, cy, cz, cross_n, dot, theta, alpha, a_par, smu
    cdef double z_hi, z_lo, z, z_new, y, t, residual, c, s, dtdz, f, g, gd
    cdef int it
    cdef int done = 0
    if not tof > 0.0:
        raise ValueError("time of flight must be positive")
    r1n = sqrt(r1x * r1x + r1y * r1y + r1z * r1z)
    r2n = sqrt(r2x * r2x + r2y * r2y + r2z * r2z)
    cx = r1y * r2z - r1z * r2y
    cy = r1z * r2x - r1x * r2z
    cz = r1x * r2y - r1y * r2x
    cross_n = sqrt(cx * cx + cy * cy + cz * cz)
    dot = r1x * r2x + r1y * r2y + r1z * r2z
    theta = atan2(cross_n, dot)
    if theta < 1e-10 or M_PI - theta < 1e-10:
        raise DegenerateGeometry(f"transfer angle {theta:.3e} rad is degenerate")
    if (cz < 0.0) == prograde:
        theta = TWO_PI - theta
    alpha = 0.5 * theta
    a_par = sqrt(2.0 * r1n * r2n) * cos(alpha)
    smu = sqrt(mu)

    z_hi = 4.0 * M_PI * M_PI * (1.0 - 1e-12)
    z_lo = -4.0 * M_PI * M_PI
    for it in range(60):
        _lambert_tof(z_lo, r1n, r2n, a_par, smu, alpha, &y, &t)
        if t < tof:
            done = 1
            break
        z_lo *= 2.0
    if not done:
        raise NumericalFailure("Lambert bracket search failed", tof)
    z = 0.5 * (z_lo + z_hi)
    residual = INFINITY
    done = 0
    for it in range(LAMBERT_MAXITER):
        _lambert_tof(z, r1n, r2n, a_par, smu, alpha, &y, &t)
        residual = t - tof
        if t < tof:
            z_lo = z
        else:
            z_hi = z
        if fabs(residual) <= 1e-14 * tof or z_hi - z_lo <= 1e-15 * (fabs(z) if fabs(z) > 1.0 else 1.0):
            done = 1
            break
        z_new = z
        if y > 0.0:
            _stumpff(z, &c, &s)
            if fabs(z) > 1e-8:
                dtdz = (pow(y / c, 1.5) * (0.5 / z * (c - 1.5 * s / c) + 0.75 * s * s / c)
                        + a_par / 8.0 * (3.0 * s / c * sqrt(y) + a_par * sqrt(c / y)))
            else:
                dtdz = (sqrt(2.0) / 40.0 * pow(y, 1.5)
                        + a_par / 8.0 * (sqrt(y) + a_par * sqrt(0.5 / y)))
            dtdz /= smu
            if dtdz > 0.0:
                z_new = z - residual / dtdz
        if not (z_lo < z_new < z_hi) or z_new == z:
            z_new = 0.5 * (z_lo + z_hi)
        z = z_new
    if not done and fabs(residual) > 1e-9 * tof:
        raise NumericalFailure("Lambert iteration did not converge", fabs(residual))
    _lambert_tof(z, r1n, r2n, a_par, smu, alpha, &y, &t)
    f = 1.0 - y / r1n
    g = a_par * sqrt(y / mu)
    gd = 1.0 - y / r2n
    return (((r2x - f * r1x) / g, (r2y - f * r1y) / g, (r2z - f * r1z) / g),
            ((gd * r2x - r1x) / g, (gd * r2y - r1y) / g, (gd * r2z - r1z) / g))


# --- Sims-Flanagan legs -----------------------------------------------------

cdef inline double _pre_impulse_mass(double m_post, double c) noexcept nogil:
    cdef double w = m_post * exp(c / m_post)
    cdef double ex, resid
    cdef int it
    for it in range(30):
        ex = exp(-c / w)
        resid = w * ex - m_post
        w -= resid / (ex * (1.0 + c / w))
        if fabs(resid) <= 1e-16 * m_post:
            break
    return w


cdef inline void _kick(double* v, double* m, const double* u, double thrust,
                       double seg_dt, double ve, double sgn) noexcept nogil:
    cdef double un = sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
    cdef double k
    if un == 0.0:
        return
    if sgn > 0:
        k = thrust * seg_dt / m[0]
        m[0] = m[0] * exp(-k * un / ve)
    else:
        m[0] = _pre_impulse_mass(m[0], thrust * seg_dt * un / ve)
        k = thrust * seg_dt / m[0]
    v[0] += sgn * k * u[0]
    v[1] += sgn * k * u[1]
    v[2] += sgn * k * u[2]


cdef int _fwd_from(double* r, double* v, double* m, const double* x, int k0, int nf,
                   double seg_dt, double thrust, double ve, double mu, double* resid) noexcept nogil:
    cdef int k
    cdef double h = 0.5 * seg_dt
    cdef double rt[3]
    cdef double vt[3]
    for k in range(k0, nf):
        _kick(v, m, &x[3 * k], thrust, seg_dt, ve, 1.0)
        if _propagate(r, v, 2.0 * h if k < nf - 1 else h, mu, rt, vt, resid):
            return 1
        r[0] = rt[0]; r[1] = rt[1]; r[2] = rt[2]
        v[0] = vt[0]; v[1] = vt[1]; v[2] = vt[2]
    return 0


cdef int _bwd_from(double* r, double* v, double* m, const double* x, int k0, int nf,
                   double seg_dt, double thrust, double ve, double mu, double* resid) noexcept nogil:
    cdef int k
    cdef double h = 0.5 * seg_dt
    cdef double rt[3]
    cdef double vt[3]
    for k in range(k0, nf - 1, -1):
        _kick(v, m, &x[3 * k], thrust, seg_dt, ve, -1.0)
        if _propagate(r, v, -2.0 * h if k > nf else -h, mu, rt, vt, resid):
            return 1
        r[0] = rt[0]; r[1] = rt[1]; r[2] = rt[2]
        v[0] = vt[0]; v[1] = vt[1]; v[2] = vt[2]
    return 0


cdef int _legs(const double* x, const double* dep, const double* arr, int n, double seg_dt,
               double thrust, double ve, double mu, double* fwd, double* bwd,
               double* store, double* resid) noexcept nogil:
    """fwd/bwd receive (r, v, m) as 7 doubles; store (optional) n rows of 7."""
    cdef int nf = (n + 1) // 2
    cdef int k, i
    cdef double h = 0.5 * seg_dt
    cdef double r[3]
    cdef double v[3]
    cdef double rt[3]
    cdef double vt[3]
    cdef double m
    if _propagate(dep, &dep[3], h, mu, r, v, resid):
        return 1
    m = 1.0
    for k in range(nf):
        if store != NULL:
            for i in range(3):
                store[7 * k + i] = r[i]
                store[7 * k + 3 + i] = v[i]
            store[7 * k + 6] = m
        _kick(v, &m, &x[3 * k], thrust, seg_dt, ve, 1.0)
        if _propagate(r, v, 2.0 * h if k < nf - 1 else h, mu, rt, vt, resid):
            return 1
        for i in range(3):
            r[i] = rt[i]
            v[i] = vt[i]
    for i in range(3):
        fwd[i] = r[i]
        fwd[3 + i] = v[i]
    fwd[6] = m
    if _propagate(arr, &arr[3], -h, mu, r, v, resid):
        return 1
    m = x[3 * n]
    for k in range(n - 1, nf - 1, -1):
        if store != NULL:
            for i in range(3):
                store[7 * k + i] = r[i]
                store[7 * k + 3 + i] = v[i]
            store[7 * k + 6] = m
        _kick(v, &m, &x[3 * k], thrust, seg_dt, ve, -1.0)
        if _propagate(r, v, -2.0 * h if k > nf else -h, mu, rt, vt, resid):
            return 1
        for i in range(3):
            r[i] = rt[i]
            v[i] = vt[i]
    for i in range(3):
        bwd[i] = r[i]
        bwd[3 + i] = v[i]
    bwd[6] = m
    return 0


def sft_defect(x, dep, arr, int n, double seg_dt, double thrust, double ve, double mu=1.0):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] dv = np.ascontiguousarray(dep, dtype=np.float64)
    cdef const double[::1] av = np.ascontiguousarray(arr, dtype=np.float64)
    cdef double fwd[7]
    cdef double bwd[7]
    cdef double resid = 0.0
    cdef int i
    out = np.empty(7)
    cdef double[::1] o = out
    if _legs(&xv[0], &dv[0], &av[0], n, seg_dt, thrust, ve, mu, fwd, bwd, NULL, &resid):
        raise NumericalFailure("universal-variable Kepler iteration did not converge", resid)
    for i in range(7):
        o[i] = fwd[i] - bwd[i]
    return out


def sft_jacobian(x, dep, arr, int n, double seg_dt, double thrust, double ve,
                 double fd_step=1e-7, double mu=1.0):
    cdef double[::1] xv = np.array(x, dtype=np.float64)
    cdef const double[::1] dv = np.ascontiguousarray(dep, dtype=np.float64)
    cdef const double[::1] av = np.ascontiguousarray(arr, dtype=np.float64)
    cdef int nf = (n + 1) // 2
    cdef int nx = 3 * n + 1
    cdef double fwd[7]
    cdef double bwd[7]
    cdef double side[2][7]
    cdef double r[3]
    cdef double v[3]
    cdef double m, xj, step, sgn
    cdef double resid = 0.0
    cdef int i, j, k, si, fail = 0
    store_arr = np.empty(7 * n)
    cdef double[::1] store = store_arr
    c_arr = np.empty(7)
    jac_arr = np.empty((7, nx))
    cdef double[::1] c = c_arr
    cdef double[:, ::1] jac = jac_arr
    with nogil:
        if _legs(&xv[0], &dv[0], &av[0], n, seg_dt, thrust, ve, mu, fwd, bwd, &store[0], &resid):
            fail = 1
        else:
            for i in range(7):
                c[i] = fwd[i] - bwd[i]
            for j in range(nx):
                xj = xv[j]
                step = fd_step * (fabs(xj) if fabs(xj) > 1.0 else 1.0)
                for si in range(2):
                    sgn = 1.0 if si == 0 else -1.0
                    xv[j] = xj + sgn * step
                    if j == 3 * n:
                        k = n - 1
                        m = xv[j]
                    else:
                        k = j // 3
                        m = store[7 * k + 6]
                    for i in range(3):
                        r[i] = store[7 * k + i]
                        v[i] = store[7 * k + 3 + i]
                    if k < nf and j != 3 * n:
                        fail = _fwd_from(r, v, &m, &xv[0], k, nf, seg_dt, thrust, ve, mu, &resid)
                        for i in range(3):
                            side[si][i] = r[i] - bwd[i]
                            side[si][3 + i] = v[i] - bwd[3 + i]
                        side[si][6] = m - bwd[6]
                    else:
                        fail = _bwd_from(r, v, &m, &xv[0], k, nf, seg_dt, thrust, ve, mu, &resid)
                        for i in range(3):
                            side[si][i] = fwd[i] - r[i]
                            side[si][3 + i] = fwd[3 + i] - v[i]
                        side[si][6] = fwd[6] - m
                    if fail:
                        break
                xv[j] = xj
                if fail:
                    break
                for i in range(7):
                    jac[i, j] = (side[0][i] - side[1][i]) / (2.0 * step)
    if fail:
        raise NumericalFailure("universal-variable Kepler iteration did not converge", resid)
    return c_arr, jac_arr
