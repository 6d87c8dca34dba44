"""Augmented-Lagrangian solver for the Sims-Flanagan NLP.

Equality constraints are the 7 match-point defects, inequalities the
per-segment throttle limits ``|u_i|^2 <= 1``; box bounds are handled by
projection inside a structured quasi-Newton inner solver.  The
``converged`` flag of :func:`solve` is the feasibility label used for the
dataset.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericalFailure
from .sft import DecisionVector, SFProblem, decision_bounds, decode_decision, encode_decision


@dataclass(frozen=True)
class SolveOptions:
    feas_tol: float = 1e-6
    opt_tol: float = 1e-4
    max_major_iters: int = 30
    max_minor_iters: int = 200
    penalty_init: float = 10.0
    penalty_growth: float = 5.0
    fd_step: float = 1e-7
    # give up once the defect has not halved over this many major iterations
    stall_majors: int = 6

    def __post_init__(self):
        for name in ("feas_tol", "opt_tol", "max_major_iters", "max_minor_iters",
                     "penalty_init", "fd_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")


@dataclass
class SolveResult:
    decision: DecisionVector
    converged: bool
    defect_norm: float
    final_mass: float
    major_iters: int
    objective_history: list = field(default_factory=list)
    defect_history: list = field(default_factory=list)
    minor_iters: int = 0
    message: str = ""


def fd_gradient(f, x, fd_step: float = 1e-7) -> np.ndarray:
    """Central-difference gradient with per-coordinate step fd_step*max(1, |x_j|)."""
    x = np.array(x, dtype=float)
    grad = np.empty_like(x)
    for j in range(x.size):
        xj = x[j]
        h = fd_step * max(1.0, abs(xj))
        x[j] = xj + h
        fp = f(x)
        x[j] = xj - h
        fm = f(x)
        x[j] = xj
        grad[j] = (fp - fm) / (2.0 * h)
    return grad


class _Merit:
    """Augmented Lagrangian of the transcribed problem for fixed multipliers."""

    def __init__(self, problem: SFProblem, opts: SolveOptions):
        self.args = problem.kernel_args()
        self.n = problem.n_segments
        self.fd_step = opts.fd_step
        self.lam = np.zeros(7)
        self.mu = np.zeros(self.n)
        self.rho = opts.penalty_init

    def throttle(self, x):
        u = x[: 3 * self.n].reshape(self.n, 3)
        return np.einsum("ij,ij->i", u, u) - 1.0

    def value(self, x):
        try:
            c = kernels.sft_defect(x, *self.args)
        except NumericalFailure:
            return math.inf
        return self._value(x, c)

    def _value(self, x, c):
        g = self.throttle(x)
        hinge = np.maximum(0.0, self.mu + self.rho * g)
        return (-x[-1] + self.lam @ c + 0.5 * self.rho * (c @ c)
                + (hinge @ hinge - self.mu @ self.mu) / (2.0 * self.rho))

    def evaluate(self, x):
        """Merit value, gradient, defect and defect Jacobian at ``x``."""
        c, jac = kernels.sft_jacobian(x, *self.args, self.fd_step)
        g = self.throttle(x)
        hinge = np.maximum(0.0, self.mu + self.rho * g)
        grad = jac.T @ (self.lam + self.rho * c)
        grad[-1] -= 1.0
        grad[: 3 * self.n] += (2.0 * hinge[:, None] * x[: 3 * self.n].reshape(self.n, 3)).ravel()
        return self._value(x, c), grad, c, jac

    def known_hessian(self, x, jac):
        """Penalty part of the merit Hessian: rho J^T J plus the active hinge blocks."""
        H = self.rho * (jac.T @ jac)
        n = self.n
        u = x[: 3 * n].reshape(n, 3)
        hinge = self.mu + self.rho * (np.einsum("ij,ij->i", u, u) - 1.0)
        act = np.flatnonzero(hinge > 0.0)
        if act.size:
            blocks = 4.0 * self.rho * u[act, :, None] * u[act, None, :]
            blocks[:, _DIAG, _DIAG] += 2.0 * hinge[act, None]
            rows = 3 * act[:, None, None] + _DIAG[None, :, None]
            cols = 3 * act[:, None, None] + _DIAG[None, None, :]
            H[rows, cols] += blocks
        return H


_DIAG = np.arange(3)
# a major iteration whose violation grows past this factor is rejected
REJECT_RATIO = 1.01
MAX_REJECTIONS = 3


def _projected_grad(x, grad, lo, hi):
    return x - np.clip(x - grad, lo, hi)


class _Inner:
    """Projected quasi-Newton minimization of the merit over the box.

    The model Hessian is structured: the penalty curvature (rho J^T J and
    the throttle hinge blocks) is assembled exactly from the defect
    Jacobian, and only the remaining Lagrangian curvature is learned by a
    damped BFGS secant update.  This keeps the inner problems well
    conditioned as the penalty grows.  Steps follow the projection arc
    with Armijo backtracking.

    The mass flow depends on |u_i|, so the merit has a cone-shaped kink at
    u_i = 0, exactly where coasting segments of a mass-optimal solution
    sit.  Small segments are pinned to zero when that lowers the merit and
    are then treated like active bounds.  Their stationarity is the
    minimum-norm subgradient: the central-difference gradient at u_i = 0
    is the smooth part, and a one-sided derivative along its steepest
    descent direction adds the cone term.  A pinned segment is released as
    soon as leaving zero is a descent direction.
    """

    pin_radius = 1e-3
    kink_step = 1e-7

    def __init__(self, merit, lo, hi):
        self.merit, self.lo, self.hi = merit, lo, hi
        self.n = merit.n
        self.pinned = np.zeros(self.n, dtype=bool)
        self.B = None

    def kink_measure(self, x, grad, c, i):
        """max(0, -D) with D the one-sided merit derivative leaving u_i = 0."""
        gs = grad[3 * i: 3 * i + 3]
        gn = float(np.linalg.norm(gs))
        if gn == 0.0:
            return 0.0
        xt = x.copy()
        xt[3 * i: 3 * i + 3] = -self.kink_step * gs / gn
        try:
            ct = kernels.sft_defect(xt, *self.merit.args)
        except NumericalFailure:
            return 0.0
        m = self.merit
        slope = (m.lam + m.rho * c) @ (ct - c) / self.kink_step
        return max(0.0, -slope)

    def _try_pin(self, x, phi):
        changed = False
        u = x[: 3 * self.n].reshape(self.n, 3)
        norms = np.linalg.norm(u, axis=1)
        for i in np.flatnonzero(~self.pinned & (norms > 0.0) & (norms <= self.pin_radius)):
            xt = x.copy()
            xt[3 * i: 3 * i + 3] = 0.0
            phit = self.merit.value(xt)
            if phit <= phi:
                x, phi = xt, phit
                self.pinned[i] = True
                changed = True
        for i in np.flatnonzero(~self.pinned & (norms == 0.0)):
            self.pinned[i] = True
        return x, changed

    def _leave_zero(self, x, phi, grad, jac, kink, release):
        """Move released segments off the kink along their steepest descent.

        The step length minimizes the local model kink*t - 0.5*C*t^2 with C
        the model curvature along that direction; it is halved until the
        merit decreases.
        """
        H = self.B + self.merit.known_hessian(x, jac)
        for i in np.flatnonzero(release):
            sl = slice(3 * i, 3 * i + 3)
            d = -grad[sl] / np.linalg.norm(grad[sl])
            curv = max(float(d @ H[sl, sl] @ d), 1e-12)
            t = min(kink[i] / curv, self.pin_radius)
            for _ in range(30):
                xt = x.copy()
                xt[sl] = t * d
                phit = self.merit.value(xt)
                if phit < phi:
                    x, phi = xt, phit
                    break
                t *= 0.5
        return x, phi

    def _update_secant(self, s, y):
        """Powell-damped BFGS update of the learned curvature."""
        B = self.B
        Bs = B @ s
        sBs = s @ Bs
        if sBs <= 1e-300:
            return
        sy = s @ y
        if sy < 0.2 * sBs:
            theta = 0.8 * sBs / (sBs - sy)
            y = theta * y + (1.0 - theta) * Bs
            sy = s @ y
        self.B = B + np.outer(y, y) / sy - np.outer(Bs, Bs) / sBs

    def run(self, x, tol, max_iter):
        """Returns (x, value, grad, defect, stationarity measure, iterations)."""
        merit, lo, hi = self.merit, self.lo, self.hi
        if self.B is None:
            self.B = 1e-2 * np.eye(x.size)
        phi, grad, c, jac = merit.evaluate(x)
        K = None
        it = 0
        while True:
            x, changed = self._try_pin(x, phi)
            if changed:
                phi, grad, c, jac = merit.evaluate(x)
                K = None
            kink = np.zeros(self.n)
            for i in np.flatnonzero(self.pinned):
                kink[i] = self.kink_measure(x, grad, c, i)
            release = self.pinned & (kink > tol)
            if release.any():
                self.pinned &= ~release
                x, phi = self._leave_zero(x, phi, grad, jac, kink, release)
                phi, grad, c, jac = merit.evaluate(x)
                K = None
            fixed = np.append(np.repeat(self.pinned, 3), False)
            pgv = np.where(fixed, 0.0, _projected_grad(x, grad, lo, hi))
            pg = max(float(np.max(np.abs(pgv))), float(np.max(kink[self.pinned], initial=0.0)))
            if pg <= tol or it >= max_iter:
                break
            it += 1
            active = fixed | ((x <= lo) & (grad > 0)) | ((x >= hi) & (grad < 0))
            free = ~active
            if K is None:
                K = merit.known_hessian(x, jac)
            H = self.B + K
            d = np.zeros_like(x)
            Hf = H[np.ix_(free, free)]
            try:
                L = np.linalg.cholesky(Hf)
                d[free] = -np.linalg.solve(L.T, np.linalg.solve(L, grad[free]))
            except np.linalg.LinAlgError:
                d[free] = -grad[free]
            alpha = 1.0
            accepted = False
            for _ in range(40):
                xn = np.clip(x + alpha * d, lo, hi)
                phin = merit.value(xn)
                if phin <= phi + 1e-4 * (grad @ (xn - x)):
                    try:
                        phin, gradn, cn, jacn = merit.evaluate(xn)
                    except NumericalFailure:
                        phin = math.inf
                    else:
                        accepted = True
                        break
                alpha *= 0.5
            if not accepted:
                break
            s = xn - x
            K = merit.known_hessian(xn, jacn)
            self._update_secant(s, gradn - grad - K @ s)
            x, phi, grad, c, jac = xn, phin, gradn, cn, jacn
        return x, phi, grad, c, pg, it


def solve(problem: SFProblem, guess: DecisionVector, opts: SolveOptions | None = None) -> SolveResult:
    """Maximize final mass subject to match-point continuity and throttle limits."""
    opts = opts or SolveOptions()
    lo, hi = decision_bounds(problem)
    x = np.clip(encode_decision(problem, guess), lo, hi)
    merit = _Merit(problem, opts)
    inner = _Inner(merit, lo, hi)
    try:
        c = kernels.sft_defect(x, *problem.kernel_args())
    except NumericalFailure as exc:
        return SolveResult(decode_decision(problem, x), False, math.inf, x[-1] * problem.m0, 0,
                           message=f"initial propagation failed: {exc}")
    prev_viol = _violation(c, merit.throttle(x))
    obj_hist, viol_hist = [], []
    converged = False
    minor_total = 0
    k = 0
    message = "major iteration budget exhausted"
    accepted = None
    rejected = 0
    for k in range(1, opts.max_major_iters + 1):
        tol_k = max(opts.opt_tol, 10.0 ** (-k))
        try:
            x_new, _, _, c_new, pg, it = inner.run(x, tol_k, opts.max_minor_iters)
        except NumericalFailure as exc:
            message = f"propagation failed: {exc}"
            break
        minor_total += it
        g = merit.throttle(x_new)
        viol = _violation(c_new, g)
        if viol_hist and viol > REJECT_RATIO * viol_hist[-1]:
            # the last multiplier step overshot: go back with a stiffer penalty
            merit.lam, merit.mu, inner.pinned, inner.B = accepted
            merit.rho *= opts.penalty_growth
            rejected += 1
            if rejected >= MAX_REJECTIONS:
                message = "stalled: defect not decreasing"
                break
            continue
        rejected = 0
        x, c = x_new, c_new
        accepted = (merit.lam.copy(), merit.mu.copy(), inner.pinned.copy(),
                    None if inner.B is None else inner.B.copy())
        obj_hist.append(-float(x[-1]))
        viol_hist.append(viol)
        if viol <= opts.feas_tol and pg <= opts.opt_tol:
            converged = True
            message = "converged"
            break
        merit.lam = merit.lam + merit.rho * c
        merit.mu = np.maximum(0.0, merit.mu + merit.rho * g)
        if viol > opts.feas_tol and viol > 0.25 * prev_viol:
            merit.rho *= opts.penalty_growth
        prev_viol = viol
        s = opts.stall_majors
        if len(viol_hist) > s and viol > opts.feas_tol and viol > 0.5 * viol_hist[-1 - s]:
            message = "stalled: defect not decreasing"
            break
    return SolveResult(
        decision=decode_decision(problem, x),
        converged=converged,
        defect_norm=float(np.max(np.abs(c))),
        final_mass=float(x[-1] * problem.m0),
        major_iters=k,
        objective_history=obj_hist,
        defect_history=viol_hist,
        minor_iters=minor_total,
        message=message,
    )


def _violation(c, g):
    return float(max(np.max(np.abs(c)), np.max(g, initial=0.0), 0.0))
