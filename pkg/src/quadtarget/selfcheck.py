"""Numerical oracle suite run by ``quadtarget selfcheck``.

Each check compares a computed quantity against a closed form or an exact
identity and reports the worst error against its tolerance. The report is
deterministic (fixed seeds, no timing), so repeated runs print the same text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from quadtarget.bvp import NX, hamiltonian, solve_tpbvp, stationarity_control
from quadtarget.care import LinearPlant, care_residual, lqr_gain, solve_care
from quadtarget.dynamics import Attitude, InertialState, PlantParams, acceleration
from quadtarget.eer import (
    EXP_Q1,
    EXP_Q2,
    SIM_Q1,
    SIM_Q2,
    eer_acceleration,
    make_eer_config,
    pd_lateral,
    recover_input,
    unmap_virtual_state,
    virtual_state,
)
from quadtarget.gpm import CostWeights
from quadtarget.spectral import lg_grid

SAMPLES = 1000


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<38} err={self.error:.3e}  tol={self.tolerance:.0e}"


def _random_states(rng: np.random.Generator, n: int):
    for _ in range(n):
        x = InertialState(rng.uniform(-10, 10, 3), rng.uniform(-5, 5, 3), rng.uniform(-5, 5, 3))
        att = Attitude(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6))
        yield x, att


def check_double_integrator(perturb_gain: float = 0.0) -> CheckResult:
    plant = LinearPlant(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]))
    Q1, Q2 = np.diag([1.0, 0.0]), np.eye(1)
    P = solve_care(plant, Q1, Q2)
    K = lqr_gain(P, plant.B, Q2) + perturb_gain
    return CheckResult("care double-integrator gain", float(np.max(np.abs(K - [-1.0, -math.sqrt(2.0)]))), 1e-9)


def check_care_residuals(perturb_gain: float = 0.0) -> CheckResult:
    """Riccati residual of every shipped weight set; an unstable loop counts as failure."""
    worst = 0.0
    for q1, q2 in ((SIM_Q1, SIM_Q2), (EXP_Q1, EXP_Q2)):
        for full in (False, True):
            cfg = make_eer_config(q1, q2, full=full)
            g = cfg.gains
            # the hook perturbs P, which shows up as a Riccati residual of the same size
            P = g.P + perturb_gain * np.eye(g.P.shape[0])
            worst = max(worst, care_residual(P, g.plant.A, g.plant.B, g.Q1, g.Q2))
            if np.max(g.spectrum.real) >= 0:
                worst = math.inf
    return CheckResult("care residual, shipped weights", worst, 1e-9)


def check_quadrature() -> CheckResult:
    grid = lg_grid(7)
    err = 0.0
    for k in range(14):
        exact = (1.0 - (-1.0) ** (k + 1)) / (k + 1)
        err = max(err, abs(float(grid.weights @ grid.nodes**k) - exact))
    return CheckResult("LG quadrature N=7, degree <= 13", err, 1e-12)


def check_differentiation() -> CheckResult:
    grid = lg_grid(7)
    pts = grid.support
    err = 0.0
    for k in range(8):
        d = grid.D @ pts**k
        # D maps values on the support (-1 plus the nodes) to derivatives at the nodes
        exact = k * grid.nodes ** max(k - 1, 0)
        err = max(err, float(np.max(np.abs(d - exact))))
    return CheckResult("LG differentiation, degree <= 7", err, 1e-10)


def check_mapping_round_trip(seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    err = 0.0
    for x, att in _random_states(rng, SAMPLES):
        rs = 3.0 / math.cos(att.pitch)
        back = unmap_virtual_state(virtual_state(x, att, rs), att, rs)
        err = max(err, float(np.max(np.abs(back - x.vector[:6]))))
    return CheckResult("virtual-frame round trip", err, 1e-12)


def check_forward_substitution(seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    params = PlantParams()
    err = 0.0
    for x, _ in _random_states(rng, SAMPLES):
        a_star = rng.uniform(-3.0, 3.0, 3)
        u = recover_input(a_star, x, params)
        a = acceleration(u.thrust, u.pitch, u.roll, x.abs_vel, params)
        err = max(err, float(np.max(np.abs(a - a_star))))
    return CheckResult("input recovery forward substitution", err, 1e-10)


def check_lateral_pd(seed: int = 3) -> CheckResult:
    """Zero roll: the full 6-state loop's lateral command is the decoupled PD law."""
    rng = np.random.default_rng(seed)
    cfg = make_eer_config(full=True)
    kp, kd = -cfg.gains.K[1, 1], -cfg.gains.K[1, 4]
    err = abs(kp - 2.0) + abs(kd - 3.0)
    for x, att in _random_states(rng, SAMPLES):
        a = eer_acceleration(x, Attitude(att.pitch, 0.0), cfg)
        err = max(err, abs(a[1] - pd_lateral(x.rel_pos[1], x.rel_vel[1], 2.0, 3.0)))
    return CheckResult("zero-roll lateral PD equivalence", err, 1e-10)


def check_bvp_stationarity() -> CheckResult:
    """Gradient of the Hamiltonian in ``u`` at every mesh point of a converged solve."""
    w = CostWeights()
    params = PlantParams()
    xi0 = np.zeros(NX)
    xi0[0] = -10.0
    xi0[3] = -3.0
    sol = solve_tpbvp(xi0, 2.0, w, params=params, thrust_ref=params.gravity)
    if not sol.converged:
        return CheckResult("BVP stationarity and terminal costate", math.inf, 1e-5)
    u = stationarity_control(sol.x, sol.lam, w, params, params.gravity)
    err = 0.0
    h = 1e-3  # H is quadratic in u, so central differences are exact up to round-off
    for k in range(sol.t.size):
        for i in range(3):
            up, um = u[:, k].copy(), u[:, k].copy()
            up[i] += h
            um[i] -= h
            grad = (hamiltonian(sol.x[:, k], sol.lam[:, k], up, w, params, params.gravity)
                    - hamiltonian(sol.x[:, k], sol.lam[:, k], um, w, params, params.gravity)) / (2 * h)
            err = max(err, abs(grad))
    err = max(err, float(np.max(np.abs(sol.lam[:, -1]))))
    return CheckResult("BVP stationarity and terminal costate", err, 1e-5)


def _checks(perturb_gain: float) -> list[Callable[[], CheckResult]]:
    return [
        lambda: check_double_integrator(perturb_gain),
        lambda: check_care_residuals(perturb_gain),
        check_quadrature,
        check_differentiation,
        check_mapping_round_trip,
        check_forward_substitution,
        check_lateral_pd,
        check_bvp_stationarity,
    ]


def run_selfcheck(perturb_gain: float = 0.0) -> list[CheckResult]:
    """Run every check. ``perturb_gain`` is a test hook that corrupts the Riccati solutions."""
    return [c() for c in _checks(perturb_gain)]


__all__ = ["CheckResult", "run_selfcheck"]
