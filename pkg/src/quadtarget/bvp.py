"""Indirect (costate) baseline controller.

Near hover the plant is replaced by a linearized model ``h'`` and the
targeting cost by

    G' = 1/2 (u1 - u_ref)^2 + 1/2 u2^2 + 1/2 u3^2
         + k1 (x1 + 3)^2 + k2 x2^2 + k3 dz^2,     dz = -x1 u2 - x3,

with ``u_ref = g`` when the thrust offset is enabled and 0 otherwise.
Stationarity of the Hamiltonian gives the control in closed form, which
leaves an 18-dimensional two-point boundary value problem in ``y = [x, lam]``:

    x' = h'(x, u*(x, lam)),   lam' = S(x, lam),   x(0) = xi0,   lam(t_f) = 0.

It is solved by 3-stage Lobatto (Hermite-Simpson) collocation on a uniform
mesh with damped Newton iterations; the analytic Jacobian is banded once the
boundary rows are placed at both ends, so each step is a LAPACK band solve.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg

from quadtarget.dynamics import ControlInput, InertialState, PlantParams
from quadtarget.eer import NON_CONVERGED, Command, Limits
from quadtarget.errors import ConfigurationError
from quadtarget.gpm import CostWeights, _finish_command

NX = 9
NY = 2 * NX


def _weights_tuple(weights: CostWeights) -> tuple[float, float, float]:
    return weights.k1, weights.k2, weights.k3


def simplified_dynamics(x, u, params: PlantParams) -> np.ndarray:
    """Near-hover model: small-angle thrust direction, drag on absolute velocity.

    Works on single vectors or on ``(9, M)`` / ``(3, M)`` column stacks.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    g = params.gravity
    c1, c2, c3 = params.drag
    acc = np.stack([
        g * u[1] - c1 * x[6],
        -g * u[2] - c2 * x[7],
        u[0] - c3 * x[8] - g,
    ])
    return np.concatenate([x[3:6], acc, acc])


def stationarity_control(x, lam, weights: CostWeights, params: PlantParams | None = None,
                         thrust_ref: float = 0.0) -> np.ndarray:
    """Minimizer of the Hamiltonian over ``u`` (raw ``[f/m, pitch, roll]``)."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    g = (params or PlantParams()).gravity
    _, _, k3 = _weights_tuple(weights)
    u1 = thrust_ref - lam[5] - lam[8]
    u2 = (-g * (lam[3] + lam[6]) - 2.0 * k3 * x[0] * x[2]) / (2.0 * k3 * x[0] ** 2 + 1.0)
    u3 = g * (lam[4] + lam[7])
    return np.stack([u1, u2, u3])


def costate_dynamics(x, lam, u, weights: CostWeights, params: PlantParams | None = None) -> np.ndarray:
    """``lam' = -dH/dx`` evaluated at the control ``u``."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    u = np.asarray(u, dtype=float)
    k1, k2, k3 = _weights_tuple(weights)
    c1, c2, c3 = (params or PlantParams()).drag
    dz = -x[0] * u[1] - x[2]
    return np.stack([
        -2.0 * k1 * (x[0] + 3.0) + 2.0 * k3 * dz * u[1],
        -2.0 * k2 * x[1],
        2.0 * k3 * dz,
        -lam[0],
        -lam[1],
        -lam[2],
        c1 * (lam[3] + lam[6]),
        c2 * (lam[4] + lam[7]),
        c3 * (lam[5] + lam[8]),
    ])


def running_cost(x, u, weights: CostWeights, thrust_ref: float = 0.0) -> float:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1, k2, k3 = _weights_tuple(weights)
    dz = -x[0] * u[1] - x[2]
    return (0.5 * ((u[0] - thrust_ref) ** 2 + u[1] ** 2 + u[2] ** 2)
            + k1 * (x[0] + 3.0) ** 2 + k2 * x[1] ** 2 + k3 * dz ** 2)


def hamiltonian(x, lam, u, weights: CostWeights, params: PlantParams | None = None,
                thrust_ref: float = 0.0) -> float:
    params = params or PlantParams()
    return running_cost(x, u, weights, thrust_ref) + float(
        np.dot(lam, simplified_dynamics(x, u, params)))


@dataclass(frozen=True)
class _System:
    """Right-hand side of the 18-dimensional BVP and its Jacobian."""

    weights: CostWeights
    params: PlantParams
    thrust_ref: float

    def rhs(self, Y: np.ndarray) -> np.ndarray:
        x, lam = Y[:NX], Y[NX:]
        u = stationarity_control(x, lam, self.weights, self.params, self.thrust_ref)
        return np.concatenate([simplified_dynamics(x, u, self.params),
                               costate_dynamics(x, lam, u, self.weights, self.params)])

    def jacobian(self, Y: np.ndarray) -> np.ndarray:
        """``d rhs / d y`` for each column of ``Y``; shape ``(M, 18, 18)``."""
        k1, k2, k3 = _weights_tuple(self.weights)
        g = self.params.gravity
        c1, c2, c3 = self.params.drag
        x, lam = Y[:NX], Y[NX:]
        M = Y.shape[1]
        x1, x3 = x[0], x[2]
        den = 2.0 * k3 * x1 * x1 + 1.0
        num = -g * (lam[3] + lam[6]) - 2.0 * k3 * x1 * x3
        u2 = num / den
        dz = -x1 * u2 - x3
        # gradients of u2 and dz wrt (x1, x3, lam4, lam7)
        u2_x1 = (-2.0 * k3 * x3 * den - num * 4.0 * k3 * x1) / (den * den)
        u2_x3 = -2.0 * k3 * x1 / den
        u2_l = -g / den
        dz_x1 = -u2 - x1 * u2_x1
        dz_x3 = -x1 * u2_x3 - 1.0
        dz_l = -x1 * u2_l

        J = np.zeros((M, NY, NY))
        for r in (0, 1, 2):
            J[:, r, 3 + r] = 1.0
        for base in (3, 6):
            # horizontal: g u2 - c1 x7
            J[:, base, 0] = g * u2_x1
            J[:, base, 2] = g * u2_x3
            J[:, base, NX + 3] = g * u2_l
            J[:, base, NX + 6] = g * u2_l
            J[:, base, 6] = -c1
            # lateral: -g u3 - c2 x8, u3 = g (lam5 + lam8)
            J[:, base + 1, NX + 4] = -g * g
            J[:, base + 1, NX + 7] = -g * g
            J[:, base + 1, 7] = -c2
            # vertical: u1 - c3 x9 - g, u1 = ref - lam6 - lam9
            J[:, base + 2, NX + 5] = -1.0
            J[:, base + 2, NX + 8] = -1.0
            J[:, base + 2, 8] = -c3
        # lam1' = -2 k1 (x1 + 3) + 2 k3 dz u2
        r = NX
        J[:, r, 0] = -2.0 * k1 + 2.0 * k3 * (dz_x1 * u2 + dz * u2_x1)
        J[:, r, 2] = 2.0 * k3 * (dz_x3 * u2 + dz * u2_x3)
        J[:, r, NX + 3] = 2.0 * k3 * (dz_l * u2 + dz * u2_l)
        J[:, r, NX + 6] = J[:, r, NX + 3]
        J[:, r + 1, 1] = -2.0 * k2
        # lam3' = 2 k3 dz
        J[:, r + 2, 0] = 2.0 * k3 * dz_x1
        J[:, r + 2, 2] = 2.0 * k3 * dz_x3
        J[:, r + 2, NX + 3] = 2.0 * k3 * dz_l
        J[:, r + 2, NX + 6] = 2.0 * k3 * dz_l
        for i in range(3):
            J[:, r + 3 + i, NX + i] = -1.0
        for i, ci in enumerate((c1, c2, c3)):
            J[:, r + 6 + i, NX + 3 + i] = ci
            J[:, r + 6 + i, NX + 6 + i] = ci
        return J


@dataclass
class BvpSolution:
    t: np.ndarray
    x: np.ndarray
    lam: np.ndarray
    residual: float
    boundary_residual: float
    converged: bool
    iterations: int
    wall_time: float
    thrust_ref: float = 0.0
    message: str = ""

    @property
    def y(self) -> np.ndarray:
        return np.vstack([self.x, self.lam])

    def controls(self, weights: CostWeights, params: PlantParams | None = None) -> np.ndarray:
        return stationarity_control(self.x, self.lam, weights, params, self.thrust_ref)

    def dump_csv(self, path, weights: CostWeights, params: PlantParams | None = None) -> None:
        """Write ``(t, x, lam, u)`` at every mesh point."""
        u = self.controls(weights, params)
        header = (["t_s"] + [f"x{i + 1}" for i in range(NX)] + [f"lam{i + 1}" for i in range(NX)]
                  + ["u1", "u2", "u3"])
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.t.size):
                row = np.concatenate([[self.t[k]], self.x[:, k], self.lam[:, k], u[:, k]])
                w.writerow([f"{v:.12g}" for v in row])


BAND = NY + NX - 1  # lower and upper bandwidth of the ordered Newton matrix


@lru_cache(maxsize=8)
def _band_pattern(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the Newton matrix entries, in the data order of
    :func:`_collocation`.

    Rows are ordered ``[x(0) - xi0, defect_0, ..., defect_{m-2}, lam(t_f)]``,
    which makes the matrix banded with bandwidth :data:`BAND`.
    """
    br, bc = np.meshgrid(np.arange(NY), np.arange(NY), indexing="ij")
    rows, cols = [np.arange(NX)], [np.arange(NX)]
    for i in range(m - 1):
        r0 = NX + i * NY
        rows += [r0 + br.ravel(), r0 + br.ravel()]
        cols += [i * NY + bc.ravel(), (i + 1) * NY + bc.ravel()]
    n = NY * m
    rows.append(n - NX + np.arange(NX))
    cols.append(n - NX + np.arange(NX))
    return np.concatenate(rows), np.concatenate(cols)


def _collocation(system: _System, Y: np.ndarray, h: float, xi0: np.ndarray):
    """Residual vector and Jacobian entries of the Hermite-Simpson equations.

    Returns ``(res, data)`` where ``data`` lines up with :func:`_band_pattern`.
    """
    F = system.rhs(Y)
    Ym = 0.5 * (Y[:, :-1] + Y[:, 1:]) - (h / 8.0) * (F[:, 1:] - F[:, :-1])
    Fm = system.rhs(Ym)
    defects = Y[:, 1:] - Y[:, :-1] - (h / 6.0) * (F[:, :-1] + 4.0 * Fm + F[:, 1:])
    res = np.concatenate([Y[:NX, 0] - xi0, defects.T.ravel(), Y[NX:, -1]])

    Jn = system.jacobian(Y)
    Jm = system.jacobian(Ym)
    eye = np.eye(NY)
    JmL = Jm @ (0.5 * eye + (h / 8.0) * Jn[:-1])
    JmR = Jm @ (0.5 * eye - (h / 8.0) * Jn[1:])
    left = -eye - (h / 6.0) * (Jn[:-1] + 4.0 * JmL)
    right = eye - (h / 6.0) * (Jn[1:] + 4.0 * JmR)
    ones = np.ones(NX)
    data = np.concatenate([ones, np.stack([left, right], axis=1).ravel(), ones])
    return res, data


def newton_matrix(data: np.ndarray, m: int, dense: bool = False) -> np.ndarray:
    """Assemble the Newton matrix in LAPACK band storage (or dense)."""
    rows, cols = _band_pattern(m)
    n = NY * m
    if dense:
        A = np.zeros((n, n))
        A[rows, cols] = data
        return A
    ab = np.zeros((2 * BAND + 1, n))
    ab[BAND + rows - cols, cols] = data
    return ab


def _split_residual(res: np.ndarray) -> tuple[float, float]:
    bc = np.concatenate([res[:NX], res[-NX:]])
    coll = res[NX:-NX]
    return (float(np.max(np.abs(coll))) if coll.size else 0.0, float(np.max(np.abs(bc))))


def initial_mesh(xi0, t_f: float, nodes: int) -> np.ndarray:
    """Cold start: state held at ``xi0``, zero costate."""
    Y = np.zeros((NY, nodes))
    Y[:NX] = np.asarray(xi0, dtype=float)[:, None]
    return Y


def shift_mesh(sol: BvpSolution, dt: float) -> np.ndarray:
    """Previous ``(x, lam)`` trajectory advanced by ``dt``; the tail is held."""
    t_new = np.clip(sol.t + dt, sol.t[0], sol.t[-1])
    Y = sol.y
    return np.vstack([np.interp(t_new, sol.t, Y[i]) for i in range(NY)])


def solve_tpbvp(xi0, t_f: float, weights: CostWeights, warm_mesh: np.ndarray | None = None, *,
                params: PlantParams | None = None, thrust_ref: float = 0.0, nodes: int = 33,
                tol: float = 1e-6, max_iter: int = 30) -> BvpSolution:
    """Solve the costate BVP from ``xi0`` over ``[0, t_f]``.

    ``warm_mesh`` is an ``(18, nodes)`` initial guess. Non-convergence is
    reported through ``converged=False`` together with the best iterate.
    """
    if not t_f > 0:
        raise ConfigurationError("t_f must be positive")
    if nodes < 2:
        raise ConfigurationError("BVP mesh needs at least 2 nodes")
    params = params or PlantParams()
    xi0 = np.asarray(xi0, dtype=float).reshape(NX)
    t0 = time.perf_counter()
    system = _System(weights, params, float(thrust_ref))
    t = np.linspace(0.0, t_f, nodes)
    h = t[1] - t[0]
    if warm_mesh is None:
        Y = initial_mesh(xi0, t_f, nodes)
    else:
        Y = np.array(warm_mesh, dtype=float)
        if Y.shape != (NY, nodes):
            raise ConfigurationError(f"warm mesh must have shape {(NY, nodes)}, got {Y.shape}")

    res, data = _collocation(system, Y, h, xi0)
    merit = 0.5 * float(res @ res)
    message = "iteration limit"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        coll, bc = _split_residual(res)
        if coll < tol and bc < tol:
            converged = True
            it -= 1
            message = "converged"
            break
        try:
            step = scipy.linalg.solve_banded((BAND, BAND), newton_matrix(data, nodes), -res,
                                             overwrite_ab=True, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            message = f"singular Newton system: {exc}"
            break
        if not np.all(np.isfinite(step)):
            message = "singular Newton system"
            break
        step = step.reshape(nodes, NY).T
        alpha = 1.0
        while True:
            Y_new = Y + alpha * step
            res_new, data_new = _collocation(system, Y_new, h, xi0)
            merit_new = 0.5 * float(res_new @ res_new)
            # Newton direction is a descent direction of the squared residual
            if np.isfinite(merit_new) and merit_new <= (1.0 - 1e-4 * alpha) * merit:
                break
            alpha *= 0.5
            if alpha < 1.0 / 1024:
                break
        if not merit_new <= merit:
            message = "damped Newton stalled"
            break
        Y, res, data, merit = Y_new, res_new, data_new, merit_new
    else:
        coll, bc = _split_residual(res)
        if coll < tol and bc < tol:
            converged, message = True, "converged"

    coll, bc = _split_residual(res)
    return BvpSolution(t, Y[:NX].copy(), Y[NX:].copy(), coll, bc, converged, it,
                       time.perf_counter() - t0, float(thrust_ref), message)


@dataclass(frozen=True)
class BvpConfig:
    t_f: float = 2.0
    nodes: int = 33
    weights: CostWeights = field(default_factory=CostWeights)
    thrust_offset: bool = True
    lateral_pd: bool = True
    kp: float = 2.0
    kd: float = 3.0
    tol: float = 1e-6
    max_iter: int = 30
    control_period: float = 0.02
    params: PlantParams = field(default_factory=PlantParams)
    limits: Limits = field(default_factory=Limits)

    def __post_init__(self):
        if not self.t_f > 0:
            raise ConfigurationError("t_f must be positive")
        if not 2 <= self.nodes <= 1025:
            raise ConfigurationError("BVP mesh size must lie in [2, 1025]")

    @property
    def thrust_ref(self) -> float:
        return self.params.gravity if self.thrust_offset else 0.0


def bvp_step(x: InertialState, warm_cache: dict, cfg: BvpConfig) -> Command:
    """Solve from ``x``, return the stationarity control at ``t = 0``.

    ``warm_cache`` holds the previous :class:`BvpSolution` under
    ``"solution"``; its mesh is shifted by one control period to seed the
    next solve.
    """
    prev: BvpSolution | None = warm_cache.get("solution")
    warm = None
    if prev is not None and prev.t.size == cfg.nodes and math.isclose(prev.t[-1], cfg.t_f):
        warm = shift_mesh(prev, cfg.control_period)
    xi0 = x.vector
    sol = solve_tpbvp(xi0, cfg.t_f, cfg.weights, warm, params=cfg.params,
                      thrust_ref=cfg.thrust_ref, nodes=cfg.nodes, tol=cfg.tol, max_iter=cfg.max_iter)
    if not sol.converged and warm is not None:
        # the shifted guess can be poor after a large disturbance: retry cold
        cold = solve_tpbvp(xi0, cfg.t_f, cfg.weights, None, params=cfg.params,
                           thrust_ref=cfg.thrust_ref, nodes=cfg.nodes, tol=cfg.tol,
                           max_iter=cfg.max_iter)
        if cold.converged or cold.residual < sol.residual:
            sol = cold
    if sol.converged or prev is None:
        warm_cache["solution"] = sol
    u = stationarity_control(xi0, sol.lam[:, 0], cfg.weights, cfg.params, cfg.thrust_ref)
    flags = [] if sol.converged else [NON_CONVERGED]
    return _finish_command(u, x, cfg, flags)


class BvpController:
    name = "bvp"

    def __init__(self, cfg: BvpConfig):
        self.cfg = cfg
        self.cache: dict = {}

    def reset(self) -> None:
        self.cache = {}

    def step(self, x: InertialState, t: float = 0.0) -> Command:
        return bvp_step(x, self.cache, self.cfg)


__all__ = [
    "BvpConfig",
    "BvpController",
    "BvpSolution",
    "ControlInput",
    "bvp_step",
    "costate_dynamics",
    "hamiltonian",
    "initial_mesh",
    "running_cost",
    "shift_mesh",
    "simplified_dynamics",
    "solve_tpbvp",
    "stationarity_control",
]
