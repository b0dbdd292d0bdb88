"""Point-mass quadrotor model for the targeting problem.

State vector (9):
    x[0:3]  relative position   p - p_t      [m]
    x[3:6]  relative velocity   v - v_t      [m/s]
    x[6:9]  absolute velocity   v            [m/s]

Input vector (3):
    u = [f/m, pitch, roll]                   [m/s^2, rad, rad]

Attitude is treated as a direct input (no attitude loop) and yaw is held at
zero throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from quadtarget.errors import ConfigurationError, DivergenceError

GRAVITY = 9.80665
HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class Attitude:
    """Pitch/roll/yaw in radians. Yaw is fixed at zero."""

    pitch: float = 0.0
    roll: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not abs(self.pitch) < HALF_PI:
            raise ValueError(f"|pitch| must be < pi/2, got {self.pitch}")
        if not abs(self.roll) < HALF_PI:
            raise ValueError(f"|roll| must be < pi/2, got {self.roll}")
        if self.yaw != 0.0:
            raise ValueError("yaw is held at zero")


LEVEL = Attitude()


@dataclass(frozen=True)
class PlantParams:
    mass: float = 1.98
    gravity: float = GRAVITY
    drag: tuple[float, float, float] = (0.1, 0.1, 0.1)
    safe_distance: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "drag", tuple(float(c) for c in self.drag))
        if len(self.drag) != 3:
            raise ValueError("drag must have three coefficients")
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.gravity <= 0:
            raise ValueError("gravity must be positive")
        if any(c < 0 for c in self.drag):
            raise ValueError("drag coefficients must be non-negative")
        if self.safe_distance <= 0:
            raise ValueError("safe_distance must be positive")

    @property
    def drag_matrix(self) -> np.ndarray:
        return np.diag(self.drag)


@dataclass(frozen=True)
class ControlInput:
    """Thrust per unit mass and tilt command."""

    thrust: float
    pitch: float
    roll: float

    def __post_init__(self):
        if not self.thrust > 0:
            raise ValueError(f"thrust must be positive, got {self.thrust}")
        if not abs(self.pitch) < HALF_PI:
            raise ValueError(f"|pitch| must be < pi/2, got {self.pitch}")
        if not abs(self.roll) < HALF_PI:
            raise ValueError(f"|roll| must be < pi/2, got {self.roll}")

    def as_array(self) -> np.ndarray:
        return np.array([self.thrust, self.pitch, self.roll])

    @property
    def attitude(self) -> Attitude:
        return Attitude(self.pitch, self.roll)


@dataclass(frozen=True)
class TargetState:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        v = np.asarray(self.velocity, dtype=float).reshape(3)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
            raise ValueError("target state must be finite")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "velocity", v)


@dataclass(frozen=True)
class InertialState:
    rel_pos: np.ndarray
    rel_vel: np.ndarray
    abs_vel: np.ndarray

    def __post_init__(self):
        for name in ("rel_pos", "rel_vel", "abs_vel"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(3)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_vector(cls, x) -> InertialState:
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:9].copy())

    @classmethod
    def from_components(cls, rel_pos, rel_vel, abs_vel, target_velocity=None, atol=1e-9):
        """Build a state, optionally checking ``abs_vel - rel_vel == target_velocity``."""
        state = cls(rel_pos, rel_vel, abs_vel)
        if target_velocity is not None:
            implied = state.abs_vel - state.rel_vel
            if not np.allclose(implied, np.asarray(target_velocity, dtype=float), atol=atol, rtol=0.0):
                raise ValueError(
                    f"inconsistent state: abs_vel - rel_vel = {implied} but target velocity is "
                    f"{np.asarray(target_velocity)}"
                )
        return state

    @classmethod
    def from_quad_and_target(cls, quad_pos, quad_vel, target: TargetState) -> InertialState:
        quad_pos = np.asarray(quad_pos, dtype=float)
        quad_vel = np.asarray(quad_vel, dtype=float)
        return cls.from_components(
            quad_pos - target.position, quad_vel - target.velocity, quad_vel, target.velocity
        )

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.rel_pos, self.rel_vel, self.abs_vel])

    @property
    def target_velocity(self) -> np.ndarray:
        return self.abs_vel - self.rel_vel


@dataclass(frozen=True)
class TargetingErrors:
    d_x: float
    d_y: float
    d_z: float


def rotation_matrix(att: Attitude) -> np.ndarray:
    """Body-to-inertial rotation for Z-Y-X angles with yaw at zero."""
    st, ct = math.sin(att.pitch), math.cos(att.pitch)
    sp, cp = math.sin(att.roll), math.cos(att.roll)
    return np.array(
        [
            [ct, st * sp, st * cp],
            [0.0, cp, -sp],
            [-st, ct * sp, ct * cp],
        ]
    )


def acceleration(thrust: float, pitch: float, roll: float, abs_vel, params: PlantParams) -> np.ndarray:
    """Inertial acceleration produced by ``u`` with linear drag on the absolute velocity."""
    c1, c2, c3 = params.drag
    cr = math.cos(roll)
    return np.array(
        [
            thrust * cr * math.sin(pitch) - c1 * abs_vel[0],
            -thrust * math.sin(roll) - c2 * abs_vel[1],
            thrust * cr * math.cos(pitch) - c3 * abs_vel[2] - params.gravity,
        ]
    )


def targeting_dynamics(x: InertialState, u: ControlInput, params: PlantParams) -> np.ndarray:
    """Time derivative of the 9-component targeting state (target velocity held)."""
    a = acceleration(u.thrust, u.pitch, u.roll, x.abs_vel, params)
    return np.concatenate([x.rel_vel, a, a])


def targeting_errors(quad_pos, target_pos, pitch: float) -> TargetingErrors:
    """Standoff distance and aim-point offsets on the targeted plane."""
    if not abs(pitch) < HALF_PI:
        raise ValueError(f"|pitch| must be < pi/2, got {pitch}")
    d_x = float(target_pos[0] - quad_pos[0])
    d_y = float(target_pos[1] - quad_pos[1])
    d_z = d_x * math.tan(pitch) - float(quad_pos[2] - target_pos[2])
    return TargetingErrors(d_x, d_y, d_z)


def errors_from_state(x: InertialState, pitch: float) -> TargetingErrors:
    """Same as :func:`targeting_errors` but from relative position ``p - p_t``."""
    return targeting_errors(x.rel_pos, np.zeros(3), pitch)


def stage_cost(x: InertialState, u, pitch_for_dz: float, k1: float, k2: float, k3: float,
               safe_distance: float = 3.0) -> float:
    """Running cost: half input energy plus weighted targeting errors.

    ``u`` may be a :class:`ControlInput` or any length-3 sequence; the raw
    form allows evaluating the cost at ``u = 0``, which is not a valid command.
    """
    if min(k1, k2, k3) <= 0:
        raise ValueError("weights must be positive")
    uv = u.as_array() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    err = errors_from_state(x, pitch_for_dz)
    return float(
        0.5 * uv @ uv
        + k1 * (err.d_x - safe_distance) ** 2
        + k2 * err.d_y**2
        + k3 * err.d_z**2
    )


class ScenarioKind(str, Enum):
    CASE1 = "case1"
    CASE2 = "case2"
    RAMP = "ramp"
    CUSTOM = "custom"


@dataclass(frozen=True)
class TargetMotion:
    """Analytic target trajectory along the inertial x axis.

    * ``case1``  constant speed (default 3 m/s)
    * ``case2``  v(t) = mean + amplitude * sin(2 pi f t)  (2.8 +/- 0.2 m/s at 0.5 Hz)
    * ``ramp``   uniform acceleration from rest up to ``final_speed``, then constant
    * ``custom`` constant velocity vector ``velocity``
    """

    kind: ScenarioKind = ScenarioKind.CASE1
    initial_position: tuple[float, float, float] = (0.0, 0.0, 0.61)
    speed: float = 3.0
    mean_speed: float = 2.8
    amplitude: float = 0.2
    frequency: float = 0.5
    acceleration: float = 0.15
    final_speed: float = 1.5
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ScenarioKind(self.kind))
        except ValueError as exc:
            raise ConfigurationError(f"unknown scenario kind {self.kind!r}") from exc
        object.__setattr__(self, "initial_position", tuple(float(v) for v in self.initial_position))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        if self.kind is ScenarioKind.RAMP and self.acceleration <= 0:
            raise ConfigurationError("ramp acceleration must be positive")

    @property
    def height(self) -> float:
        return self.initial_position[2]

    def state_at(self, t: float) -> TargetState:
        if t < 0:
            raise ValueError("t must be non-negative")
        x0, y0, z0 = self.initial_position
        kind = self.kind
        if kind is ScenarioKind.CASE1:
            return TargetState((x0 + self.speed * t, y0, z0), (self.speed, 0.0, 0.0))
        if kind is ScenarioKind.CASE2:
            w = 2.0 * math.pi * self.frequency
            v = self.mean_speed + self.amplitude * math.sin(w * t)
            x = x0 + self.mean_speed * t + self.amplitude * (1.0 - math.cos(w * t)) / w
            return TargetState((x, y0, z0), (v, 0.0, 0.0))
        if kind is ScenarioKind.RAMP:
            t_end = self.final_speed / self.acceleration
            if t <= t_end:
                return TargetState(
                    (x0 + 0.5 * self.acceleration * t * t, y0, z0), (self.acceleration * t, 0.0, 0.0)
                )
            x_end = 0.5 * self.acceleration * t_end * t_end
            return TargetState(
                (x0 + x_end + self.final_speed * (t - t_end), y0, z0), (self.final_speed, 0.0, 0.0)
            )
        vx, vy, vz = self.velocity
        return TargetState((x0 + vx * t, y0 + vy * t, z0 + vz * t), self.velocity)


def target_trajectory(t: float, scenario, **params) -> TargetState:
    """Target state at time ``t`` for a scenario kind (or a ready :class:`TargetMotion`)."""
    motion = scenario if isinstance(scenario, TargetMotion) else TargetMotion(kind=scenario, **params)
    return motion.state_at(t)


def _quad_rhs(y: np.ndarray, thrust_vec: np.ndarray, drag: np.ndarray) -> np.ndarray:
    # y = [p, v]; thrust_vec already includes -g e3
    return np.concatenate([y[3:6], thrust_vec - drag * y[3:6]])


def integrate_step(
    x: InertialState,
    u: ControlInput,
    target: Callable[[float], TargetState],
    t: float,
    dt: float,
    params: PlantParams,
) -> InertialState:
    """Advance the plant by one classical RK4 step with ``u`` held.

    The quadrotor's absolute position and velocity are integrated; the target
    is advanced analytically through ``target(t)`` and the relative states are
    rebuilt from both at ``t + dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    tgt0 = target(t)
    y = np.concatenate([x.rel_pos + tgt0.position, x.abs_vel])
    y = rk4_quad(y, u, dt, params)
    if not np.all(np.isfinite(y)):
        raise DivergenceError("non-finite plant state", t + dt)
    tgt1 = target(t + dt)
    return InertialState(y[0:3] - tgt1.position, y[3:6] - tgt1.velocity, y[3:6])


def thrust_vector(u: ControlInput, params: PlantParams) -> np.ndarray:
    """Specific thrust in the inertial frame minus gravity."""
    cr = math.cos(u.roll)
    return np.array(
        [
            u.thrust * cr * math.sin(u.pitch),
            -u.thrust * math.sin(u.roll),
            u.thrust * cr * math.cos(u.pitch) - params.gravity,
        ]
    )


def rk4_quad(y: np.ndarray, u: ControlInput, dt: float, params: PlantParams) -> np.ndarray:
    """One RK4 step of ``[p, v]`` under held input ``u``."""
    f = thrust_vector(u, params)
    c = np.asarray(params.drag)
    k1 = _quad_rhs(y, f, c)
    k2 = _quad_rhs(y + 0.5 * dt * k1, f, c)
    k3 = _quad_rhs(y + 0.5 * dt * k2, f, c)
    k4 = _quad_rhs(y + dt * k3, f, c)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
