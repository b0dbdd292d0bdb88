"""Efficient Egocentric Regulator.

Pipeline for one control update:

1. map the relative state into a virtual frame aligned with the body and
   centred on the aim point (``virtual_state``);
2. apply the cached LQR gain of the virtual double integrator
   (``virtual_control``), with the lateral axis optionally replaced by an
   independent PD loop;
3. rotate the virtual acceleration back to the inertial frame
   (``desired_acceleration``);
4. invert the translational dynamics for thrust, pitch and roll
   (``recover_input``).

No Riccati work happens at run time; the gain is synthesized once when the
:class:`EerConfig` is built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from quadtarget.care import GainSynthesis, egocentric_plant, synthesize
from quadtarget.dynamics import (
    LEVEL,
    Attitude,
    ControlInput,
    InertialState,
    PlantParams,
    rotation_matrix,
)
from quadtarget.errors import ConfigurationError, SaturationError

SIM_Q1 = (58.0, 264.0, 30.0, 10.0)
SIM_Q2 = (40.0, 30.0)
EXP_Q1 = (116.0, 441.0, 87.0, 18.0)
EXP_Q2 = (40.0, 30.0)

# Lateral weights for the 6-state form chosen so the lateral LQR gains equal
# kp = 2, kd = 3 (kp = sqrt(q_y / r_y), kd = sqrt(q_vy / r_y + 2 kp)).
LATERAL_Q = (4.0, 5.0)
LATERAL_R = 1.0

SATURATED = "saturated"
NON_CONVERGED = "non_converged"


class Command(NamedTuple):
    """Controller output for one update: the held input plus status flags."""

    control: ControlInput
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Limits:
    pitch: float = 0.6
    roll: float = 0.6
    thrust_min_g: float = 0.2
    thrust_max_g: float = 2.0

    def __post_init__(self):
        if not (0 < self.pitch < math.pi / 2 and 0 < self.roll < math.pi / 2):
            raise ConfigurationError("tilt limits must lie in (0, pi/2)")
        if not 0 < self.thrust_min_g < self.thrust_max_g:
            raise ConfigurationError("thrust limits must satisfy 0 < min < max")


@dataclass(frozen=True)
class EerConfig:
    gains: GainSynthesis
    kp: float = 2.0
    kd: float = 3.0
    r_star_mode: str = "exact"
    params: PlantParams = field(default_factory=PlantParams)
    limits: Limits = field(default_factory=Limits)
    drag_velocity: str = "absolute"

    def __post_init__(self):
        if self.kp <= 0 or self.kd <= 0:
            raise ConfigurationError("kp and kd must be positive")
        if self.r_star_mode not in ("exact", "constant"):
            raise ConfigurationError(f"unknown r_star_mode {self.r_star_mode!r}")
        if self.drag_velocity not in ("absolute", "relative"):
            raise ConfigurationError(f"unknown drag_velocity {self.drag_velocity!r}")
        if self.gains.K.shape not in ((2, 4), (3, 6)):
            raise ConfigurationError(f"gain must be 2x4 or 3x6, got {self.gains.K.shape}")

    @property
    def reduced(self) -> bool:
        return self.gains.K.shape == (2, 4)


def make_eer_config(q1=SIM_Q1, q2=SIM_Q2, *, full: bool = False, **kwargs) -> EerConfig:
    """Synthesize the gain and build a configuration.

    ``q1``/``q2`` are the diagonals of the weighting matrices. With
    ``full=True`` and 4/2-element diagonals, the lateral weights
    :data:`LATERAL_Q`/:data:`LATERAL_R` are inserted.
    """
    q1 = tuple(float(v) for v in q1)
    q2 = tuple(float(v) for v in q2)
    if full and len(q1) == 4:
        q1 = (q1[0], LATERAL_Q[0], q1[1], q1[2], LATERAL_Q[1], q1[3])
    if full and len(q2) == 2:
        q2 = (q2[0], LATERAL_R, q2[1])
    gains = synthesize(egocentric_plant(full=full), np.diag(q1), np.diag(q2))
    return EerConfig(gains=gains, **kwargs)


def r_star(pitch: float, mode: str = "exact", safe_distance: float = 3.0) -> float:
    """Desired virtual-frame standoff along the body x axis."""
    if not abs(pitch) < math.pi / 2:
        raise ValueError("|pitch| must be < pi/2")
    if mode == "exact":
        return safe_distance / math.cos(pitch)
    if mode == "constant":
        return safe_distance
    raise ValueError(f"unknown r_star mode {mode!r}")


def virtual_state(x: InertialState, att: Attitude, r_star: float) -> np.ndarray:
    """Full 6-component virtual state ``[x_e + r*, y_e, z_e, v_xe, v_ye, v_ze]``."""
    Rt = rotation_matrix(att).T
    xe = np.concatenate([Rt @ x.rel_pos, Rt @ x.rel_vel])
    xe[0] += r_star
    return xe


def reduce_virtual_state(xe_full: np.ndarray) -> np.ndarray:
    """Drop the lateral components: ``[x_e + r*, z_e, v_xe, v_ze]``."""
    return xe_full[[0, 2, 3, 5]]


def unmap_virtual_state(xe_full: np.ndarray, att: Attitude, r_star: float) -> np.ndarray:
    """Inverse of :func:`virtual_state`: recover ``x[0:6]``."""
    R = rotation_matrix(att)
    d = np.array(xe_full, dtype=float)
    d[0] -= r_star
    return np.concatenate([R @ d[0:3], R @ d[3:6]])


def virtual_control(K: np.ndarray, xe: np.ndarray) -> np.ndarray:
    return K @ xe


def pd_lateral(offset: float, rate: float, kp: float, kd: float) -> float:
    """Lateral acceleration from positive PD gains applied as negative feedback.

    ``offset`` is the lateral relative position ``y_q - y_t`` and ``rate`` its
    derivative; the result pulls the vehicle back toward the target line.
    """
    if kp <= 0 or kd <= 0:
        raise ValueError("PD gains must be positive")
    return -(kp * offset + kd * rate)


def desired_acceleration(att: Attitude, ue_full: np.ndarray) -> np.ndarray:
    """Rotate a virtual (body-aligned) acceleration into the inertial frame."""
    return rotation_matrix(att) @ np.asarray(ue_full, dtype=float)


def _specific_force(a_star, x: InertialState, params: PlantParams, drag_velocity: str):
    v = x.abs_vel if drag_velocity == "absolute" else x.rel_vel
    c1, c2, c3 = params.drag
    return (
        a_star[0] + c1 * v[0],
        a_star[1] + c2 * v[1],
        a_star[2] + c3 * v[2] + params.gravity,
    )


def recover_input(a_star, x: InertialState, params: PlantParams,
                  drag_velocity: str = "absolute") -> ControlInput:
    """Thrust, pitch and roll that realize inertial acceleration ``a_star``.

    Exact algebraic inverse of the translational dynamics when
    ``drag_velocity="absolute"``; ``"relative"`` applies drag compensation to
    the relative velocity instead.

    Raises
    ------
    SaturationError
        If the required thrust direction points downward or the roll
        argument leaves [-1, 1].
    """
    fx, fy, fz = _specific_force(a_star, x, params, drag_velocity)
    if not fz > 0:
        raise SaturationError(f"vertical specific force {fz:.4g} is not positive")
    u1 = math.sqrt(fx * fx + fy * fy + fz * fz)
    s = -fy / u1
    if abs(s) > 1.0:
        raise SaturationError(f"roll argument {s:.4g} outside [-1, 1]")
    return ControlInput(u1, math.atan(fx / fz), math.asin(s))


def _recover_clamped(a_star, x: InertialState, cfg: EerConfig) -> tuple[ControlInput, bool]:
    fx, fy, fz = _specific_force(a_star, x, cfg.params, cfg.drag_velocity)
    g = cfg.params.gravity
    lim = cfg.limits
    u1 = math.sqrt(fx * fx + fy * fy + fz * fz)
    pitch = math.atan2(fx, fz)
    roll = math.asin(max(-1.0, min(1.0, -fy / u1))) if u1 > 0 else 0.0
    saturated = fz <= 0 or abs(pitch) > lim.pitch or abs(roll) > lim.roll
    pitch = max(-lim.pitch, min(lim.pitch, pitch))
    roll = max(-lim.roll, min(lim.roll, roll))
    lo, hi = lim.thrust_min_g * g, lim.thrust_max_g * g
    if u1 < lo or u1 > hi:
        saturated = True
        u1 = max(lo, min(hi, u1))
    return ControlInput(u1, pitch, roll), saturated


def eer_acceleration(x: InertialState, att: Attitude, cfg: EerConfig) -> np.ndarray:
    """Inertial acceleration command produced by the EER for ``x`` at ``att``.

    In the reduced form the roll angle is dropped from the frame mapping so
    the longitudinal/vertical loop and the lateral PD loop stay decoupled;
    the lateral slot of the virtual input carries the PD output.
    """
    rs = r_star(att.pitch, cfg.r_star_mode, cfg.params.safe_distance)
    if cfg.reduced:
        frame = Attitude(att.pitch, 0.0)
        xe = reduce_virtual_state(virtual_state(x, frame, rs))
        ue = virtual_control(cfg.gains.K, xe)
        ay = pd_lateral(x.rel_pos[1], x.rel_vel[1], cfg.kp, cfg.kd)
        return desired_acceleration(frame, np.array([ue[0], ay, ue[1]]))
    xe = virtual_state(x, att, rs)
    return desired_acceleration(att, virtual_control(cfg.gains.K, xe))


def eer_step(x: InertialState, att: Attitude, cfg: EerConfig) -> Command:
    """One EER update. Saturation is clamped and reported, never raised."""
    a_star = eer_acceleration(x, att, cfg)
    u, saturated = _recover_clamped(a_star, x, cfg)
    return Command(u, (SATURATED,) if saturated else ())


class EerController:
    """Stateful wrapper holding the last commanded attitude.

    With no attitude state in the plant, the attitude used for the frame
    mapping (and for ``r*``) is the one commanded at the previous update;
    the first update uses level attitude.
    """

    name = "eer"

    def __init__(self, cfg: EerConfig):
        self.cfg = cfg
        self.attitude = LEVEL

    def reset(self) -> None:
        self.attitude = LEVEL

    def step(self, x: InertialState, t: float = 0.0) -> Command:
        cmd = eer_step(x, self.attitude, self.cfg)
        self.attitude = Attitude(cmd.control.pitch, cmd.control.roll)
        return cmd
