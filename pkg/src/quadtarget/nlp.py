"""Equality-constrained NLP solver: augmented Lagrangian outer loop, BFGS inner loop.

    min f(z)  s.t.  c(z) = 0

The inner problem minimizes ``L_A(z) = f + mu^T c + (rho/2) |c|^2`` with a
BFGS inverse-Hessian update and a backtracking Armijo line search. When the
caller supplies the Hessian of ``f + w^T c``, each inner solve seeds BFGS
with the inverse of the augmented-Lagrangian Hessian, eigenvalues reflected
and floored to make it positive definite, instead of the identity. First-order
multiplier updates and penalty growth follow the usual bound-constrained
Lagrangian scheme (without bounds).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ObjectiveFn = Callable[[np.ndarray], tuple[float, np.ndarray]]
ConstraintFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
CurvatureFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class NlpOptions:
    ctol: float = 1e-6
    gtol: float = 1e-6
    max_outer: int = 50
    max_inner: int = 200
    # wall-clock cap per solve; off by default because it makes runs timing dependent
    time_budget: float | None = None
    initial_penalty: float = 10.0
    penalty_growth: float = 10.0
    max_penalty: float = 1e8
    hessian_refresh: int = 0
    # cap on the penalty carried over from a warm start; the carried multipliers
    # already do most of the work and a smaller penalty keeps the inner problem well scaled
    warm_penalty: float | None = 10.0
    # constraint violation below which Newton steps on the KKT system are tried
    # (needs the Lagrangian Hessian); 0 disables them
    polish_threshold: float = 1e-2


@dataclass
class NlpSolution:
    x: np.ndarray
    objective: float
    violation: float
    grad_norm: float
    iterations: int
    inner_iterations: int
    converged: bool
    wall_time: float
    multipliers: np.ndarray
    penalty: float
    message: str = ""
    hess_inv: np.ndarray | None = field(default=None, repr=False)


def lagrangian_gradient(obj: ObjectiveFn, cons: ConstraintFn, z, mu) -> np.ndarray:
    _, g = obj(z)
    _, J = cons(z)
    return g + J.T @ mu


class _AugmentedLagrangian:
    def __init__(self, obj, cons, mu, rho):
        self.obj, self.cons, self.mu, self.rho = obj, cons, mu, rho
        self.evaluations = 0

    def seed_inverse_hessian(self, z, curvature: CurvatureFn) -> np.ndarray:
        c, J = self.cons(z)
        M = curvature(z, self.mu + self.rho * c) + self.rho * (J.T @ J)
        lam, V = np.linalg.eigh(0.5 * (M + M.T))
        lam = np.abs(lam)
        lam = np.maximum(lam, 1e-8 * max(1.0, float(lam.max())))
        return (V / lam) @ V.T

    def __call__(self, z):
        self.evaluations += 1
        f, g = self.obj(z)
        c, J = self.cons(z)
        w = self.mu + self.rho * c
        val = f + self.mu @ c + 0.5 * self.rho * (c @ c)
        return val, g + J.T @ w, c, f


def _bfgs(fun, z, H, gtol, max_iter, deadline, reseed=None, refresh=0):
    """Minimize ``fun`` from ``z``; returns (z, value, grad, c, f, H, iters).

    ``reseed(z)`` (optional) rebuilds the inverse-Hessian model; it is called
    whenever the line search needs more than two halvings. The loop also stops
    once the achievable decrease is at round-off level.
    """
    val, g, c, f = fun(z)
    n = z.size
    identity_seed = H is None
    if identity_seed:
        H = np.eye(n)
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= gtol:
            it -= 1
            break
        p = -H @ g
        slope = g @ p
        if slope >= 0:
            # lost descent direction: restart from the model or steepest descent
            H = reseed(z) if reseed is not None else np.eye(n)
            p = -H @ g
            slope = g @ p
        # below this the Armijo test is decided by round-off
        if -slope <= 1e-15 * max(1.0, abs(val)):
            break
        step = 1.0
        halvings = 0
        while True:
            z_new = z + step * p
            val_new, g_new, c_new, f_new = fun(z_new)
            if np.isfinite(val_new) and val_new <= val + 1e-4 * step * slope:
                break
            step *= 0.5
            halvings += 1
            if step < 1e-10:
                return z, val, g, c, f, H, it
        s = z_new - z
        y = g_new - g
        z, val, g, c, f = z_new, val_new, g_new, c_new, f_new
        if reseed is not None and (halvings > 2 or (refresh and it % refresh == 0)):
            H = reseed(z)
        else:
            sy = s @ y
            if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
                if it == 1 and identity_seed:
                    H = (sy / (y @ y)) * np.eye(n)
                rho = 1.0 / sy
                Hy = H @ y
                H = H + (rho * rho * (y @ Hy) + rho) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
        if deadline is not None and time.perf_counter() > deadline:
            break
    return z, val, g, c, f, H, it


def _kkt_polish(obj, cons, curvature: CurvatureFn, z, mu, ctol, gtol, max_steps=4):
    """Newton steps on the KKT system from a nearly feasible point.

    Each step solves ``[[W, J^T], [J, 0]] [dz, mu+] = [-g, -c]`` with ``W`` the
    exact Lagrangian Hessian. A step is kept only if it reduces
    ``max(viol / ctol, |grad L| / gtol)``; returns ``None`` if none was kept.
    """
    f, g = obj(z)
    c, J = cons(z)
    n, m = z.size, c.size

    def score(c, gL):
        return max(float(np.max(np.abs(c))) / ctol, float(np.max(np.abs(gL))) / gtol)

    cur = score(c, g + J.T @ mu)
    out = None
    K = np.zeros((n + m, n + m))
    for _ in range(max_steps):
        K[:n, :n] = curvature(z, mu)
        K[:n, n:] = J.T
        K[n:, :n] = J
        try:
            sol = np.linalg.solve(K, -np.concatenate([g, c]))
        except np.linalg.LinAlgError:
            break
        z_new = z + sol[:n]
        mu_new = sol[n:]
        f_new, g_new = obj(z_new)
        c_new, J_new = cons(z_new)
        new = score(c_new, g_new + J_new.T @ mu_new)
        if not np.isfinite(new) or new >= cur:
            break
        z, mu, f, g, c, J, cur = z_new, mu_new, f_new, g_new, c_new, J_new, new
        out = (z, mu, f, c, g + J.T @ mu)
        if cur < 1.0:
            break
    return out


def solve_augmented_lagrangian(
    obj: ObjectiveFn,
    cons: ConstraintFn,
    x0,
    options: NlpOptions | None = None,
    multipliers=None,
    penalty: float | None = None,
    hess_inv=None,
    curvature: CurvatureFn | None = None,
) -> NlpSolution:
    """Solve ``min f s.t. c = 0`` from ``x0``.

    Budget exhaustion (outer iterations or wall-time) returns the best point
    seen, ranked by constraint violation then objective, with
    ``converged=False``.
    """
    opts = options or NlpOptions()
    t0 = time.perf_counter()
    deadline = None if opts.time_budget is None else t0 + opts.time_budget
    z = np.array(x0, dtype=float)
    c0, _ = cons(z)
    mu = np.zeros_like(c0) if multipliers is None else np.array(multipliers, dtype=float)
    if penalty is None:
        rho = opts.initial_penalty
    elif opts.warm_penalty is not None:
        rho = min(float(penalty), opts.warm_penalty)
    else:
        rho = float(penalty)
    H = None if hess_inv is None else np.array(hess_inv, dtype=float)

    best = None
    inner_total = 0
    omega = max(opts.gtol, 1.0 / rho)
    eta = max(opts.ctol, 0.1 / rho**0.1)
    message = "outer iteration limit"
    outer = 0
    for outer in range(1, opts.max_outer + 1):
        fun = _AugmentedLagrangian(obj, cons, mu, rho)
        reseed = None
        if curvature is not None:
            def reseed(zz, fun=fun):
                return fun.seed_inverse_hessian(zz, curvature)
            H = reseed(z)
        z, _, gL, c, f, H, inner = _bfgs(fun, z, H, omega, opts.max_inner, deadline, reseed, opts.hessian_refresh)
        inner_total += inner
        viol = float(np.max(np.abs(c))) if c.size else 0.0
        mu_new = mu + rho * c
        # gL = grad f + J^T (mu + rho c) = Lagrangian gradient at the updated multipliers
        if curvature is not None and c.size and viol < opts.polish_threshold:
            polished = _kkt_polish(obj, cons, curvature, z, mu_new, opts.ctol, opts.gtol)
            if polished is not None:
                z, mu_new, f, c, gL = polished
                viol = float(np.max(np.abs(c)))
        gnorm = float(np.max(np.abs(gL)))
        cand = (viol, f, z.copy(), mu_new.copy(), gnorm)
        if best is None or (cand[0], cand[1]) < (best[0], best[1]):
            best = cand
        if viol < opts.ctol and gnorm < opts.gtol:
            sol = NlpSolution(z, f, viol, gnorm, outer, inner_total, True,
                              time.perf_counter() - t0, mu_new, rho, "converged", H)
            return sol
        if deadline is not None and time.perf_counter() > deadline:
            message = "time budget exhausted"
            break
        if viol <= eta or rho >= opts.max_penalty:
            mu = mu_new
            omega = max(opts.gtol, omega / rho)
            eta = max(opts.ctol, eta / rho**0.9)
        else:
            rho = min(opts.max_penalty, rho * opts.penalty_growth)
            omega = max(opts.gtol, 1.0 / rho)
            eta = max(opts.ctol, 0.1 / rho**0.1)
    viol, f, z, mu_best, gnorm = best
    return NlpSolution(z, f, viol, gnorm, outer, inner_total, False,
                       time.perf_counter() - t0, mu_best, rho, message, H)
