"""Gauss pseudospectral baseline controller.

The finite-horizon targeting problem is transcribed at ``N`` Legendre-Gauss
nodes. Decision vector layout::

    z = [xi_1 (N), ..., xi_9 (N), eta_1 (N), eta_2 (N), eta_3 (N)]

with ``xi_i`` the state samples and ``eta_j`` the control samples
``[f/m, pitch, roll]``. Products of node vectors are element-wise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from quadtarget.dynamics import ControlInput, InertialState, PlantParams
from quadtarget.errors import ConfigurationError
from quadtarget.eer import NON_CONVERGED, SATURATED, Command, Limits, pd_lateral
from quadtarget.nlp import NlpOptions, NlpSolution, solve_augmented_lagrangian
from quadtarget.spectral import LgGrid, interpolation_row, lg_grid

NX, NU = 9, 3


@dataclass(frozen=True)
class CostWeights:
    k1: float = 50.0
    k2: float = 50.0
    k3: float = 50.0

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3) <= 0:
            raise ValueError("cost weights must be positive")


@dataclass
class GpmProblem:
    """Transcribed NLP with analytic objective gradient and constraint Jacobian."""

    xi0: np.ndarray
    params: PlantParams
    weights: CostWeights
    t_f: float
    grid: LgGrid
    thrust_ref: float = 0.0
    safe_distance: float = 3.0
    # exterior penalty on thrust outside [min, max] and |pitch|, |roll| beyond their limits
    control_limits: tuple[float, float, float, float] = (-np.inf, np.inf, np.inf, np.inf)
    limit_weight: float = 0.0
    _J_const: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.xi0 = np.asarray(self.xi0, dtype=float).reshape(NX)
        if not np.all(np.isfinite(self.xi0)):
            raise ValueError("initial state must be finite")
        N = self.grid.N
        s = 0.5 * self.t_f
        c1, c2, c3 = self.params.drag
        J = np.zeros((NX * N, (NX + NU) * N))
        D1 = self.grid.D[:, 1:]
        for i in range(NX):
            J[i * N:(i + 1) * N, i * N:(i + 1) * N] = D1
        eye = np.eye(N)
        for i in range(3):
            j = i + 3
            J[i * N:(i + 1) * N, j * N:(j + 1) * N] -= s * eye
        for rows, (col, c) in (((3, 6), (6, c1)), ((4, 7), (7, c2)), ((5, 8), (8, c3))):
            for i in rows:
                J[i * N:(i + 1) * N, col * N:(col + 1) * N] += s * c * eye
        self._J_const = J
        # positions of the control-dependent Jacobian entries
        idx = np.arange(N)
        cols = [NX * N + j * N + idx for j in range(NU)]
        rows, cc = [], []
        for i, used in ((3, (0, 1, 2)), (6, (0, 1, 2)), (4, (0, 2)), (7, (0, 2)), (5, (0, 1, 2)), (8, (0, 1, 2))):
            for j in used:
                rows.append(i * N + idx)
                cc.append(cols[j])
        self._nl_index = (np.concatenate(rows), np.concatenate(cc))
        self._d0 = self.grid.D[:, 0]
        self._s = s

    @property
    def n_vars(self) -> int:
        return (NX + NU) * self.grid.N

    @property
    def n_cons(self) -> int:
        return NX * self.grid.N

    def unpack(self, z) -> tuple[np.ndarray, np.ndarray]:
        N = self.grid.N
        z = np.asarray(z, dtype=float)
        return z[: NX * N].reshape(NX, N), z[NX * N:].reshape(NU, N)

    def pack(self, xi, eta) -> np.ndarray:
        return np.concatenate([np.asarray(xi, dtype=float).ravel(), np.asarray(eta, dtype=float).ravel()])

    def stage_terms(self, z) -> np.ndarray:
        """Integrand of the cost sampled at the nodes."""
        xi, eta = self.unpack(z)
        w = self.weights
        e = -xi[0] * np.tan(eta[1]) - xi[2]
        return (
            0.5 * (eta[0] - self.thrust_ref) ** 2
            + 0.5 * eta[1] ** 2
            + 0.5 * eta[2] ** 2
            + w.k1 * (-xi[0] - self.safe_distance) ** 2
            + w.k2 * xi[1] ** 2
            + w.k3 * e**2
        )

    def _limit_excess(self, eta) -> tuple[np.ndarray, np.ndarray]:
        """Signed excess beyond the control limits (0 inside) and its sign."""
        t_min, t_max, p_max, r_max = self.control_limits
        exc = np.zeros_like(eta)
        exc[0] = np.maximum(eta[0] - t_max, 0.0) + np.minimum(eta[0] - t_min, 0.0)
        for j, lim in ((1, p_max), (2, r_max)):
            exc[j] = np.sign(eta[j]) * np.maximum(np.abs(eta[j]) - lim, 0.0)
        return exc, (exc != 0.0).astype(float)

    def limit_penalty(self, z) -> float:
        if self.limit_weight == 0.0:
            return 0.0
        _, eta = self.unpack(z)
        exc, _ = self._limit_excess(eta)
        sw = self._s * self.grid.weights
        return float(self.limit_weight * (sw @ (exc**2).sum(axis=0)))

    def objective(self, z) -> tuple[float, np.ndarray]:
        xi, eta = self.unpack(z)
        w = self.weights
        sw = self._s * self.grid.weights
        tan2 = np.tan(eta[1])
        e = -xi[0] * tan2 - xi[2]
        val = sw @ (
            0.5 * (eta[0] - self.thrust_ref) ** 2
            + 0.5 * eta[1] ** 2
            + 0.5 * eta[2] ** 2
            + w.k1 * (xi[0] + self.safe_distance) ** 2
            + w.k2 * xi[1] ** 2
            + w.k3 * e**2
        )
        gx = np.zeros_like(xi)
        gu = np.empty_like(eta)
        gx[0] = sw * (2.0 * w.k1 * (xi[0] + self.safe_distance) - 2.0 * w.k3 * e * tan2)
        gx[1] = sw * 2.0 * w.k2 * xi[1]
        gx[2] = sw * (-2.0 * w.k3 * e)
        gu[0] = sw * (eta[0] - self.thrust_ref)
        gu[1] = sw * (eta[1] - 2.0 * w.k3 * e * xi[0] * (1.0 + tan2 * tan2))
        gu[2] = sw * eta[2]
        if self.limit_weight:
            exc, _ = self._limit_excess(eta)
            val += self.limit_weight * (sw @ (exc**2).sum(axis=0))
            gu += 2.0 * self.limit_weight * sw * exc
        return float(val), np.concatenate([gx.ravel(), gu.ravel()])

    def lagrangian_curvature(self, z, w) -> np.ndarray:
        """Hessian of ``f + w^T c`` (objective plus weighted constraints)."""
        xi, eta = self.unpack(z)
        k = self.weights
        N = self.grid.N
        s = self._s
        sw = s * self.grid.weights
        e1, e2, e3 = eta
        tan2 = np.tan(e2)
        sec2 = 1.0 + tan2 * tan2
        idx = np.arange(N)
        i1, i2, i3 = idx, N + idx, 2 * N + idx
        j1, j2, j3 = NX * N + idx, (NX + 1) * N + idx, (NX + 2) * N + idx
        H = np.zeros((self.n_vars, self.n_vars))
        H[j1, j1] = sw
        H[j2, j2] = sw
        H[j3, j3] = sw
        if self.limit_weight:
            _, active = self._limit_excess(eta)
            for j, cols in enumerate((j1, j2, j3)):
                H[cols, cols] += 2.0 * self.limit_weight * sw * active[j]
        H[i1, i1] = 2.0 * k.k1 * sw
        H[i2, i2] = 2.0 * k.k2 * sw
        # k3 e^2 with e = -xi1 tan(eta2) - xi3
        e = -xi[0] * tan2 - xi[2]
        grads = ((i1, -tan2), (i3, -np.ones(N)), (j2, -xi[0] * sec2))
        for ra, ga in grads:
            for rb, gb in grads:
                H[ra, rb] += 2.0 * k.k3 * sw * ga * gb
        H[i1, j2] += 2.0 * k.k3 * sw * e * (-sec2)
        H[j2, i1] += 2.0 * k.k3 * sw * e * (-sec2)
        H[j2, j2] += 2.0 * k.k3 * sw * e * (-2.0 * xi[0] * sec2 * tan2)
        # constraints c = ... - s F(eta); only the thrust-vector terms are nonlinear
        W = np.asarray(w, dtype=float).reshape(NX, N)
        wx, wy, wz = -s * (W[3] + W[6]), -s * (W[4] + W[7]), -s * (W[5] + W[8])
        c2u, s2u, c3u, s3u = np.cos(e2), np.sin(e2), np.cos(e3), np.sin(e3)
        h11 = np.zeros(N)
        h12 = wx * c3u * c2u + wz * (-c3u * s2u)
        h13 = wx * (-s3u * s2u) + wy * (-c3u) + wz * (-s3u * c2u)
        h22 = wx * (-e1 * c3u * s2u) + wz * (-e1 * c3u * c2u)
        h23 = wx * (-e1 * s3u * c2u) + wz * (e1 * s3u * s2u)
        h33 = wx * (-e1 * c3u * s2u) + wy * (e1 * s3u) + wz * (-e1 * c3u * c2u)
        for (ra, rb, h) in ((j1, j1, h11), (j1, j2, h12), (j1, j3, h13), (j2, j2, h22), (j2, j3, h23),
                            (j3, j3, h33)):
            H[ra, rb] += h
            if ra is not rb:
                H[rb, ra] += h
        return H

    def dynamics_rhs(self, xi, eta) -> np.ndarray:
        """Right-hand side of the targeting dynamics at each node (9 x N)."""
        c1, c2, c3 = self.params.drag
        c3u, s3u = np.cos(eta[2]), np.sin(eta[2])
        ax = eta[0] * c3u * np.sin(eta[1]) - c1 * xi[6]
        ay = -eta[0] * s3u - c2 * xi[7]
        az = eta[0] * c3u * np.cos(eta[1]) - self.params.gravity - c3 * xi[8]
        return np.vstack([xi[3], xi[4], xi[5], ax, ay, az, ax, ay, az])

    def constraints(self, z) -> tuple[np.ndarray, np.ndarray]:
        xi, eta = self.unpack(z)
        N = self.grid.N
        s = self._s
        D1 = self.grid.D[:, 1:]
        c = (xi @ D1.T) + self.xi0[:, None] * self._d0[None, :] - s * self.dynamics_rhs(xi, eta)
        e1, e2, e3 = eta
        c2u, s2u = np.cos(e2), np.sin(e2)
        c3u, s3u = np.cos(e3), np.sin(e3)
        # values ordered as in _nl_index: x rows (3 controls), y rows (2), z rows (3)
        vx = np.concatenate([-s * c3u * s2u, -s * e1 * c3u * c2u, s * e1 * s3u * s2u])
        vy = np.concatenate([s * s3u, s * e1 * c3u])
        vz = np.concatenate([-s * c3u * c2u, s * e1 * c3u * s2u, s * e1 * s3u * c2u])
        J = self._J_const.copy()
        J[self._nl_index] = np.concatenate([vx, vx, vy, vy, vz, vz])
        return c.ravel(), J

    def violation(self, z) -> float:
        c, _ = self.constraints(z)
        return float(np.max(np.abs(c)))

    def control_at_start(self, z) -> np.ndarray:
        """Control polynomial through the node values, evaluated at tau = -1."""
        _, eta = self.unpack(z)
        return eta @ interpolation_row(self.grid.nodes, -1.0)

    def initial_guess(self) -> np.ndarray:
        """States interpolated linearly from ``xi0`` to the aim state; controls at hover."""
        aim = np.zeros(NX)
        aim[0] = -self.safe_distance
        aim[6:9] = self.xi0[6:9] - self.xi0[3:6]
        frac = 0.5 * (self.grid.nodes + 1.0)
        xi = self.xi0[:, None] + (aim - self.xi0)[:, None] * frac[None, :]
        eta = np.zeros((NU, self.grid.N))
        eta[0] = self.params.gravity
        return self.pack(xi, eta)

    def dump_csv(self, z, path) -> None:
        """Write node-wise decision values and dynamics residuals for debugging."""
        xi, eta = self.unpack(z)
        c, _ = self.constraints(z)
        res = c.reshape(NX, self.grid.N)
        t = 0.5 * self.t_f * (self.grid.nodes + 1.0)
        header = (["t_s"] + [f"xi{i + 1}" for i in range(NX)] + [f"eta{j + 1}" for j in range(NU)]
                  + [f"res{i + 1}" for i in range(NX)])
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.grid.N):
                w.writerow([f"{t[k]:.9g}"] + [f"{v:.12g}" for v in xi[:, k]]
                           + [f"{v:.12g}" for v in eta[:, k]] + [f"{v:.6e}" for v in res[:, k]])


def transcribe(x0, params: PlantParams, weights: CostWeights, t_f: float, grid: LgGrid,
               thrust_offset: bool = False, limits: Limits | None = None,
               limit_weight: float = 0.0) -> GpmProblem:
    """Build the NLP for initial state ``x0``.

    With ``limit_weight > 0`` the objective gains an exterior quadratic
    penalty on thrust outside ``[thrust_min_g, thrust_max_g] * g`` and on tilt beyond
    ``limits.pitch`` / ``limits.roll``. Zero (the default) leaves the plain
    targeting cost.
    """
    x0 = x0.vector if isinstance(x0, InertialState) else np.asarray(x0, dtype=float)
    if limit_weight < 0:
        raise ConfigurationError("limit_weight must be non-negative")
    lim = limits or Limits()
    return GpmProblem(x0, params, weights, float(t_f), grid,
                      thrust_ref=params.gravity if thrust_offset else 0.0,
                      safe_distance=params.safe_distance,
                      control_limits=(lim.thrust_min_g * params.gravity, lim.thrust_max_g * params.gravity,
                                      lim.pitch, lim.roll),
                      limit_weight=float(limit_weight))


@dataclass
class WarmStart:
    z: np.ndarray
    multipliers: np.ndarray | None = None
    penalty: float | None = None
    hess_inv: np.ndarray | None = None

    @classmethod
    def from_solution(cls, sol: NlpSolution) -> WarmStart:
        return cls(sol.x.copy(), sol.multipliers.copy(), sol.penalty, sol.hess_inv)


def solve_nlp(problem: GpmProblem, warm_start: WarmStart | np.ndarray | None = None,
              options: NlpOptions | None = None) -> NlpSolution:
    if warm_start is None:
        warm_start = WarmStart(problem.initial_guess())
    elif not isinstance(warm_start, WarmStart):
        warm_start = WarmStart(np.asarray(warm_start, dtype=float))
    return solve_augmented_lagrangian(
        problem.objective, problem.constraints, warm_start.z, options,
        multipliers=warm_start.multipliers, penalty=warm_start.penalty,
        hess_inv=warm_start.hess_inv, curvature=problem.lagrangian_curvature,
    )


@dataclass(frozen=True)
class GpmConfig:
    t_f: float = 2.0
    nodes: int = 7
    weights: CostWeights = field(default_factory=CostWeights)
    thrust_offset: bool = True
    limit_weight: float = 1e4
    lateral_pd: bool = True
    kp: float = 2.0
    kd: float = 3.0
    params: PlantParams = field(default_factory=PlantParams)
    limits: Limits = field(default_factory=Limits)
    nlp: NlpOptions = field(default_factory=NlpOptions)


def _finish_command(u: np.ndarray, x: InertialState, cfg, flags: list[str]) -> Command:
    """Clamp a raw ``[f/m, pitch, roll]`` to the limits; apply the lateral PD override."""
    g = cfg.params.gravity
    lim: Limits = cfg.limits
    u1, u2, u3 = (float(v) for v in u)
    if not all(math.isfinite(v) for v in (u1, u2, u3)):
        u1, u2, u3 = g, 0.0, 0.0
        flags.append(SATURATED)
    lo, hi = lim.thrust_min_g * g, lim.thrust_max_g * g
    if cfg.lateral_pd:
        ay = pd_lateral(x.rel_pos[1], x.rel_vel[1], cfg.kp, cfg.kd)
        arg = -(ay + cfg.params.drag[1] * x.abs_vel[1]) / max(u1, lo)
        u3 = math.asin(max(-1.0, min(1.0, arg)))
    clamped = (max(lo, min(hi, u1)), max(-lim.pitch, min(lim.pitch, u2)), max(-lim.roll, min(lim.roll, u3)))
    if clamped != (u1, u2, u3) and SATURATED not in flags:
        flags.append(SATURATED)
    return Command(ControlInput(*clamped), tuple(flags))


def gpm_step(x: InertialState, warm_cache: dict, cfg: GpmConfig) -> Command:
    """Solve the transcribed problem from ``x`` and return the first control.

    ``warm_cache`` is a mutable dict owned by one simulation run; it carries
    the previous solution under key ``"warm"`` and the last
    :class:`NlpSolution` under ``"solution"``.
    """
    grid = warm_cache.get("grid")
    if grid is None or grid.N != cfg.nodes:
        grid = warm_cache["grid"] = lg_grid(cfg.nodes)
    problem = transcribe(x, cfg.params, cfg.weights, cfg.t_f, grid, cfg.thrust_offset,
                         cfg.limits, cfg.limit_weight)
    sol = solve_nlp(problem, warm_cache.get("warm"), cfg.nlp)
    warm_cache["warm"] = WarmStart.from_solution(sol)
    warm_cache["solution"] = sol
    flags = [] if sol.converged else [NON_CONVERGED]
    return _finish_command(problem.control_at_start(sol.x), x, cfg, flags)


class GpmController:
    name = "gpm"

    def __init__(self, cfg: GpmConfig):
        self.cfg = cfg
        self.cache: dict = {}

    def reset(self) -> None:
        self.cache = {}

    def step(self, x: InertialState, t: float = 0.0) -> Command:
        return gpm_step(x, self.cache, self.cfg)
