"""YAML scenario files.

Every physical quantity carries its unit in the key name (``duration_s``,
``speed_mps``, ``pitch_rad``...). Unknown keys are rejected, missing keys
take the defaults below, and :func:`dump_config` writes every key so that
``load -> dump -> load`` is the identity.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from quadtarget.bvp import BvpConfig
from quadtarget.dynamics import PlantParams, TargetMotion
from quadtarget.eer import SIM_Q1, SIM_Q2, Limits
from quadtarget.errors import ConfigurationError
from quadtarget.gpm import CostWeights, GpmConfig
from quadtarget.nlp import NlpOptions
from quadtarget.simulator import ConvergenceWindow, EerSettings, PdSettings, Scenario

Vec3 = tuple[float, float, float]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    @field_validator("*")
    @classmethod
    def _finite(cls, v):
        vals = v if isinstance(v, tuple) else (v,)
        for x in vals:
            if isinstance(x, float) and not math.isfinite(x):
                raise ValueError("must be finite")
        return v


class ScenarioSection(_Section):
    name: str = "case1"
    controller: Literal["eer", "gpm", "bvp", "pd-only", "zero"] = "eer"
    duration_s: float = Field(20.0, gt=0)
    control_period_s: float = Field(0.02, gt=0)
    integration_step_s: float = Field(0.001, gt=0)
    quad_position_m: Vec3 = (-10.0, 0.0, 0.61)
    quad_velocity_mps: Vec3 = (0.0, 0.0, 0.0)


class TargetSection(_Section):
    kind: Literal["case1", "case2", "ramp", "custom"] = "case1"
    initial_position_m: Vec3 = (0.0, 0.0, 0.61)
    speed_mps: float = 3.0
    mean_speed_mps: float = 2.8
    amplitude_mps: float = Field(0.2, ge=0)
    frequency_hz: float = Field(0.5, gt=0)
    acceleration_mps2: float = Field(0.15, gt=0)
    final_speed_mps: float = Field(1.5, ge=0)
    velocity_mps: Vec3 = (0.0, 0.0, 0.0)


class PlantSection(_Section):
    mass_kg: float = Field(1.98, gt=0)
    gravity_mps2: float = Field(9.80665, gt=0)
    drag_per_s: Vec3 = (0.1, 0.1, 0.1)
    safe_distance_m: float = Field(3.0, gt=0)

    @field_validator("drag_per_s")
    @classmethod
    def _nonneg(cls, v):
        if min(v) < 0:
            raise ValueError("drag coefficients must be non-negative")
        return v


class LimitsSection(_Section):
    pitch_rad: float = Field(0.6, gt=0, lt=math.pi / 2)
    roll_rad: float = Field(0.6, gt=0, lt=math.pi / 2)
    thrust_min_g: float = Field(0.2, gt=0)
    thrust_max_g: float = Field(2.0, gt=0)


class LateralSection(_Section):
    """Lateral PD gains shared by every controller's roll channel."""

    kp_per_s2: float = Field(2.0, gt=0)
    kd_per_s: float = Field(3.0, gt=0)


class EerSection(_Section):
    q1: tuple[float, ...] = SIM_Q1
    q2: tuple[float, ...] = SIM_Q2
    r_star_mode: Literal["exact", "constant"] = "exact"
    full: bool = False


class CostSection(_Section):
    k1: float = Field(50.0, gt=0)
    k2: float = Field(50.0, gt=0)
    k3: float = Field(50.0, gt=0)


class GpmSection(_Section):
    horizon_s: float = Field(2.0, gt=0)
    nodes: int = Field(7, ge=1, le=64)
    thrust_offset: bool = True
    limit_weight: float = Field(1e4, ge=0)
    lateral_pd: bool = True
    max_outer: int = Field(50, ge=1)
    max_inner: int = Field(200, ge=1)
    ctol: float = Field(1e-6, gt=0)
    gtol: float = Field(1e-6, gt=0)
    time_budget_s: Optional[float] = Field(None, gt=0)


class BvpSection(_Section):
    horizon_s: float = Field(2.0, gt=0)
    mesh_nodes: int = Field(33, ge=2, le=1025)
    thrust_offset: bool = True
    lateral_pd: bool = True
    tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(30, ge=1)


class PdSection(_Section):
    kp_per_s2: float = Field(2.0, gt=0)
    kd_per_s: float = Field(3.0, gt=0)


class WindowSection(_Section):
    center_m: float = 3.0
    half_width_m: float = Field(0.2, gt=0)
    hold_s: float = Field(1.0, ge=0)
    start_s: Optional[float] = Field(None, ge=0)


class NoiseSection(_Section):
    """Optional Gaussian position noise. Not part of the reference scenarios."""

    sigma_m: float = Field(0.0, ge=0)
    seed: int = 0


class ConfigFile(_Section):
    scenario: ScenarioSection = ScenarioSection()
    target: TargetSection = TargetSection()
    plant: PlantSection = PlantSection()
    limits: LimitsSection = LimitsSection()
    lateral: LateralSection = LateralSection()
    eer: EerSection = EerSection()
    cost: CostSection = CostSection()
    gpm: GpmSection = GpmSection()
    bvp: BvpSection = BvpSection()
    pd: PdSection = PdSection()
    window: WindowSection = WindowSection()
    noise: NoiseSection = NoiseSection()

    def to_scenario(self, controller: str | None = None) -> Scenario:
        """Build the runtime :class:`Scenario`; ``controller`` overrides the file's choice."""
        s, tg, pl, lm = self.scenario, self.target, self.plant, self.limits
        params = PlantParams(pl.mass_kg, pl.gravity_mps2, pl.drag_per_s, pl.safe_distance_m)
        limits = Limits(lm.pitch_rad, lm.roll_rad, lm.thrust_min_g, lm.thrust_max_g)
        weights = CostWeights(self.cost.k1, self.cost.k2, self.cost.k3)
        kp, kd = self.lateral.kp_per_s2, self.lateral.kd_per_s
        g = self.gpm
        b = self.bvp
        return Scenario(
            name=s.name,
            target=TargetMotion(tg.kind, tg.initial_position_m, tg.speed_mps, tg.mean_speed_mps,
                                tg.amplitude_mps, tg.frequency_hz, tg.acceleration_mps2,
                                tg.final_speed_mps, tg.velocity_mps),
            quad_position=s.quad_position_m,
            quad_velocity=s.quad_velocity_mps,
            duration=s.duration_s,
            control_period=s.control_period_s,
            integration_step=s.integration_step_s,
            params=params,
            limits=limits,
            controller=controller or s.controller,
            eer=EerSettings(self.eer.q1, self.eer.q2, kp, kd, self.eer.r_star_mode, self.eer.full),
            gpm=GpmConfig(g.horizon_s, g.nodes, weights, g.thrust_offset, g.limit_weight, g.lateral_pd,
                          kp, kd, params, limits,
                          NlpOptions(ctol=g.ctol, gtol=g.gtol, max_outer=g.max_outer,
                                     max_inner=g.max_inner, time_budget=g.time_budget_s)),
            bvp=BvpConfig(b.horizon_s, b.mesh_nodes, weights, b.thrust_offset, b.lateral_pd, kp, kd,
                          b.tol, b.max_iter, s.control_period_s, params, limits),
            pd=PdSettings(self.pd.kp_per_s2, self.pd.kd_per_s),
            window=ConvergenceWindow(self.window.center_m, self.window.half_width_m, self.window.hold_s,
                                     self.window.start_s),
            noise_sigma=self.noise.sigma_m,
            seed=self.noise.seed,
        )


def _key_lines(node, prefix=()) -> dict[tuple, int]:
    """Map key paths to 1-based line numbers from a composed YAML node tree."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (k.value,)
            out[path] = k.start_mark.line + 1
            out.update(_key_lines(v, path))
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out[prefix + (i,)] = v.start_mark.line + 1
    return out


def _line_for(lines: dict[tuple, int], loc: tuple) -> int | None:
    loc = tuple(loc)
    while loc:
        if loc in lines:
            return lines[loc]
        loc = loc[:-1]
    return None


def parse_config(text: str, source: str = "<string>") -> ConfigFile:
    """Parse and validate YAML text.

    Raises
    ------
    ConfigurationError
        With ``source``, ``line`` and dotted ``key`` of the first problem.
    """
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigurationError(f"malformed YAML: {getattr(exc, 'problem', exc)}", source=source,
                                 line=None if mark is None else mark.line + 1) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError("top level must be a mapping", source=source, line=1)
    lines = _key_lines(node) if node is not None else {}
    try:
        cfg = ConfigFile.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = tuple(err["loc"])
        key = ".".join(str(p) for p in loc)
        raise ConfigurationError(err["msg"], source=source, line=_line_for(lines, loc), key=key) from None
    # cross-field checks that live in the runtime types
    try:
        cfg.to_scenario()
    except (ConfigurationError, ValueError) as exc:
        key = _guess_key(str(exc))
        raise ConfigurationError(str(exc), source=source, line=_line_for(lines, key or ()),
                                 key=".".join(key) if key else None) from None
    return cfg


def _guess_key(message: str) -> tuple | None:
    hints = {
        "integer multiple": ("scenario", "control_period_s"),
        "thrust limits": ("limits", "thrust_min_g"),
        "gain must be": ("eer", "q1"),
        "weight": ("eer", "q1"),
        "initial quadrotor height": ("scenario", "quad_position_m"),
    }
    for needle, key in hints.items():
        if needle in message:
            return key
    return None


def load_config(path: str | Path) -> ConfigFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc.strerror}", source=str(path)) from exc
    return parse_config(text, str(path))


def dump_config(cfg: ConfigFile) -> str:
    data = cfg.model_dump(mode="json")
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)


SHIPPED = ("sim-case1", "sim-case2", "exp-case1", "exp-case2")


def shipped_config_path(name: str) -> Path:
    """Path of a bundled example configuration (``sim-case1`` ...)."""
    if name not in SHIPPED:
        raise ConfigurationError(f"unknown shipped config {name!r}; expected one of {SHIPPED}")
    return Path(__file__).parent / "configs" / f"{name}.yaml"


def resolve_config(arg: str) -> ConfigFile:
    """Load ``arg`` as a path, or as a shipped config name if no such file exists."""
    p = Path(arg)
    if not p.exists() and arg in SHIPPED:
        p = shipped_config_path(arg)
    return load_config(p)

