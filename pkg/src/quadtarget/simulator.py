"""Closed-loop harness: 50 Hz controller updates over a 1 ms RK4 plant.

Each control instant samples the target, builds the relative state, times
the controller call with a monotonic clock, holds the returned input and
integrates the plant until the next instant. A run stops early on a crash:
the quadrotor below ground (``z_q < 0``) or a non-finite state.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, Sequence

import numpy as np

from quadtarget.bvp import BvpConfig, BvpController
from quadtarget.dynamics import (
    LEVEL,
    ControlInput,
    InertialState,
    PlantParams,
    TargetMotion,
    errors_from_state,
    rk4_quad,
)
from quadtarget.eer import (
    SATURATED,
    SIM_Q1,
    SIM_Q2,
    Command,
    EerController,
    Limits,
    _recover_clamped,
    make_eer_config,
)
from quadtarget.errors import ConfigurationError, MetricsError
from quadtarget.gpm import GpmConfig, GpmController

CONTROLLERS = ("eer", "gpm", "bvp", "pd-only", "zero")
CSV_COLUMNS = (
    ["t"] + [f"x{i}" for i in range(1, 10)] + ["u1", "u2", "u3", "d_x", "d_y", "d_z", "z_q",
                                                 "compute_ms", "flags"]
)
TIMING_COLUMNS = ("compute_ms",)


class Controller(Protocol):
    name: str

    def step(self, x: InertialState, t: float = 0.0) -> Command: ...

    def reset(self) -> None: ...


@dataclass(frozen=True)
class EerSettings:
    q1: tuple[float, ...] = SIM_Q1
    q2: tuple[float, ...] = SIM_Q2
    kp: float = 2.0
    kd: float = 3.0
    r_star_mode: str = "exact"
    full: bool = False


@dataclass(frozen=True)
class PdSettings:
    kp: float = 2.0
    kd: float = 3.0


@dataclass(frozen=True)
class ConvergenceWindow:
    """Where the post-convergence metrics start.

    With ``start`` set, the window is simply ``t >= start``. Otherwise it
    opens at the first time ``|d_x - center|`` drops below ``half_width``
    and stays there for ``hold`` seconds.
    """

    center: float = 3.0
    half_width: float = 0.2
    hold: float = 1.0
    start: float | None = None


@dataclass(frozen=True)
class Scenario:
    name: str = "case1"
    target: TargetMotion = field(default_factory=TargetMotion)
    quad_position: tuple[float, float, float] = (-10.0, 0.0, 0.61)
    quad_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    duration: float = 20.0
    control_period: float = 0.02
    integration_step: float = 0.001
    params: PlantParams = field(default_factory=PlantParams)
    limits: Limits = field(default_factory=Limits)
    controller: str = "eer"
    eer: EerSettings = field(default_factory=EerSettings)
    gpm: GpmConfig = field(default_factory=GpmConfig)
    bvp: BvpConfig = field(default_factory=BvpConfig)
    pd: PdSettings = field(default_factory=PdSettings)
    window: ConvergenceWindow = field(default_factory=ConvergenceWindow)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigurationError("duration must be positive")
        if not self.control_period > 0 or not self.integration_step > 0:
            raise ConfigurationError("control period and integration step must be positive")
        ratio = self.control_period / self.integration_step
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise ConfigurationError("control period must be an integer multiple of the integration step")
        if self.controller not in CONTROLLERS:
            raise ConfigurationError(f"unknown controller {self.controller!r}; expected one of {CONTROLLERS}")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise sigma must be non-negative")

    @property
    def substeps(self) -> int:
        return int(round(self.control_period / self.integration_step))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.control_period))


class PdOnlyController:
    """Decoupled PD on all three axes toward the aim point, exact input recovery."""

    name = "pd-only"

    def __init__(self, kp: float, kd: float, params: PlantParams, limits: Limits):
        if kp <= 0 or kd <= 0:
            raise ConfigurationError("PD gains must be positive")
        self.kp, self.kd = kp, kd
        self._cfg = _RecoveryConfig(params, limits)

    def reset(self) -> None:
        pass

    def step(self, x: InertialState, t: float = 0.0) -> Command:
        aim = np.array([-self._cfg.params.safe_distance, 0.0, 0.0])
        a_star = -self.kp * (x.rel_pos - aim) - self.kd * x.rel_vel
        u, saturated = _recover_clamped(a_star, x, self._cfg)
        return Command(u, (SATURATED,) if saturated else ())


@dataclass(frozen=True)
class _RecoveryConfig:
    params: PlantParams
    limits: Limits
    drag_velocity: str = "absolute"


class ZeroController:
    """Dummy: minimum thrust, level attitude. The vehicle falls."""

    name = "zero"

    def __init__(self, params: PlantParams, limits: Limits):
        self._u = ControlInput(limits.thrust_min_g * params.gravity, 0.0, 0.0)

    def reset(self) -> None:
        pass

    def step(self, x: InertialState, t: float = 0.0) -> Command:
        return Command(self._u)


class NoOpController:
    """Returns a fixed hover command; used to measure timing overhead."""

    name = "noop"

    def __init__(self, params: PlantParams | None = None):
        self._cmd = Command(ControlInput((params or PlantParams()).gravity, 0.0, 0.0))

    def reset(self) -> None:
        pass

    def step(self, x: InertialState, t: float = 0.0) -> Command:
        return self._cmd


def make_controller(name: str, scenario: Scenario) -> Controller:
    """Fresh controller instance (own warm cache) configured from ``scenario``."""
    params, limits = scenario.params, scenario.limits
    if name == "eer":
        s = scenario.eer
        cfg = make_eer_config(s.q1, s.q2, full=s.full, kp=s.kp, kd=s.kd, r_star_mode=s.r_star_mode,
                              params=params, limits=limits)
        return EerController(cfg)
    if name == "gpm":
        return GpmController(replace(scenario.gpm, params=params, limits=limits))
    if name == "bvp":
        return BvpController(replace(scenario.bvp, params=params, limits=limits,
                                     control_period=scenario.control_period))
    if name == "pd-only":
        return PdOnlyController(scenario.pd.kp, scenario.pd.kd, params, limits)
    if name == "zero":
        return ZeroController(params, limits)
    raise ConfigurationError(f"unknown controller {name!r}; expected one of {CONTROLLERS}")


@dataclass
class SimTrace:
    """Per-control-step records of one run (possibly truncated by a crash)."""

    scenario: str
    controller: str
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    errors: np.ndarray
    z_q: np.ndarray
    compute_time: np.ndarray
    flags: list[tuple[str, ...]]
    crashed: bool = False
    crash_time: float | None = None
    crash_reason: str = ""

    def __len__(self) -> int:
        return self.t.size

    @property
    def attitude(self) -> np.ndarray:
        return self.u[:, 1:3]

    def rows(self, include_timing: bool = True):
        for k in range(len(self)):
            row = [self.t[k], *self.x[k], *self.u[k], *self.errors[k], self.z_q[k]]
            cells = [_fmt(v) for v in row]
            cells.append(_fmt(self.compute_time[k] * 1e3) if include_timing else "")
            cells.append("|".join(self.flags[k]) if self.flags[k] else "ok")
            yield cells

    def to_csv(self, fh, manifest: str | None = None, include_timing: bool = True) -> None:
        if manifest is not None:
            fh.write(f"# manifest={manifest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for cells in self.rows(include_timing):
            w.writerow(cells)
        if self.crashed:
            fh.write(f"# crash t={_fmt(self.crash_time)} reason={self.crash_reason}\n")

    def csv_text(self, include_timing: bool = True) -> str:
        buf = io.StringIO()
        self.to_csv(buf, include_timing=include_timing)
        return buf.getvalue()


def _fmt(v: float) -> str:
    v = float(v)
    if not math.isfinite(v):
        raise ValueError("non-finite value in trace")
    return repr(v)


def run_closed_loop(scenario: Scenario, controller: Controller | None = None,
                    clock: Callable[[], int] = time.perf_counter_ns) -> SimTrace:
    """Simulate ``scenario`` with its configured (or the given) controller."""
    ctl = controller if controller is not None else make_controller(scenario.controller, scenario)
    ctl.reset()
    params = scenario.params
    target = scenario.target
    dt = scenario.integration_step
    sub = scenario.substeps
    rng = np.random.default_rng(scenario.seed) if scenario.noise_sigma > 0 else None

    tgt0 = target.state_at(0.0)
    y = np.concatenate([np.asarray(scenario.quad_position, float), np.asarray(scenario.quad_velocity, float)])
    ts, xs, us, es, zs, cts, fl = [], [], [], [], [], [], []
    crashed, crash_time, reason = False, None, ""
    if y[2] < 0:
        raise ConfigurationError("initial quadrotor height must be non-negative")

    for k in range(scenario.n_steps):
        t = k * scenario.control_period
        tgt = target.state_at(t) if k else tgt0
        x = InertialState(y[0:3] - tgt.position, y[3:6] - tgt.velocity, y[3:6].copy())
        x_seen = x
        if rng is not None:
            x_seen = InertialState(x.rel_pos + rng.normal(0.0, scenario.noise_sigma, 3), x.rel_vel, x.abs_vel)
        t0 = clock()
        cmd = ctl.step(x_seen, t)
        elapsed = (clock() - t0) * 1e-9
        u = cmd.control
        err = errors_from_state(x, u.pitch)
        ts.append(t)
        xs.append(x.vector)
        us.append(u.as_array())
        es.append((err.d_x, err.d_y, err.d_z))
        zs.append(y[2])
        cts.append(elapsed)
        fl.append(tuple(cmd.flags))
        # zero-order hold over the control period
        for j in range(sub):
            y = rk4_quad(y, u, dt, params)
            t_in = t + (j + 1) * dt
            if not np.all(np.isfinite(y)):
                crashed, crash_time, reason = True, t_in, "non-finite state"
                break
            if y[2] < 0.0:
                crashed, crash_time, reason = True, t_in, "ground contact"
                break
        if crashed:
            break

    return SimTrace(
        scenario.name, getattr(ctl, "name", type(ctl).__name__),
        np.array(ts), np.array(xs).reshape(-1, 9), np.array(us).reshape(-1, 3),
        np.array(es).reshape(-1, 3), np.array(zs), np.array(cts), fl,
        crashed, crash_time, reason,
    )


@dataclass(frozen=True)
class Metrics:
    """Summary of one run. Error statistics cover the post-convergence window."""

    mae_dx: float
    mae_dy: float
    mae_dz: float
    max_abs_dz: float
    z_overshoot: float
    z_peak_excess: float
    z_steady: float
    window_start: float
    window_records: int
    mean_compute_ms: float
    median_compute_ms: float
    p99_compute_ms: float
    crashed: bool
    crash_time: float | None
    flagged_records: int

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


def convergence_time(trace: SimTrace, window: ConvergenceWindow) -> float | None:
    """First time ``d_x`` enters the band and stays for ``hold`` seconds (None if never)."""
    if window.start is not None:
        return window.start
    inside = np.abs(trace.errors[:, 0] - window.center) <= window.half_width
    t = trace.t
    k = 0
    n = t.size
    while k < n:
        if not inside[k]:
            k += 1
            continue
        j = k
        while j < n and inside[j]:
            j += 1
        end = t[j - 1]
        if end - t[k] >= window.hold - 1e-12:
            return float(t[k])
        k = j
    return None


def compute_metrics(trace: SimTrace, window: ConvergenceWindow | None = None,
                    include_flagged: bool = False, steady_span: float = 2.0) -> Metrics:
    """Error and timing statistics of a trace.

    ``include_flagged=False`` drops saturated/non-converged records from the
    error statistics; benchmarks use ``True`` (all records). ``z_overshoot``
    is the height excursion above the steady height (mean over the final
    ``steady_span`` seconds) inside the window; ``z_peak_excess`` is the same
    excursion over the whole run.

    Raises
    ------
    MetricsError
        Empty trace, or no records in the window.
    """
    if len(trace) == 0:
        raise MetricsError("empty trace")
    window = window or ConvergenceWindow()
    t_conv = convergence_time(trace, window)
    if t_conv is None:
        raise MetricsError("d_x never settles in the convergence band")
    in_win = trace.t >= t_conv - 1e-12
    flagged = np.array([bool(f) for f in trace.flags])
    sel = in_win if include_flagged else in_win & ~flagged
    if not sel.any():
        raise MetricsError(f"no valid records after t = {t_conv:.3f} s")
    err = trace.errors[sel]
    z_tail = trace.z_q[trace.t >= trace.t[-1] - steady_span]
    z_steady = float(np.mean(z_tail))
    ct = trace.compute_time * 1e3
    return Metrics(
        mae_dx=float(np.mean(np.abs(err[:, 0] - window.center))),
        mae_dy=float(np.mean(np.abs(err[:, 1]))),
        mae_dz=float(np.mean(np.abs(err[:, 2]))),
        max_abs_dz=float(np.max(np.abs(err[:, 2]))),
        z_overshoot=max(0.0, float(np.max(trace.z_q[in_win])) - z_steady),
        z_peak_excess=max(0.0, float(np.max(trace.z_q)) - z_steady),
        z_steady=z_steady,
        window_start=float(t_conv),
        window_records=int(sel.sum()),
        mean_compute_ms=float(np.mean(ct)),
        median_compute_ms=float(np.median(ct)),
        p99_compute_ms=float(np.percentile(ct, 99)),
        crashed=trace.crashed,
        crash_time=trace.crash_time,
        flagged_records=int(flagged.sum()),
    )


@dataclass(frozen=True)
class TimingStats:
    mean_ms: float
    median_ms: float
    p99_ms: float
    steps: int

    @classmethod
    def from_seconds(cls, seconds) -> TimingStats:
        ms = np.asarray(seconds, dtype=float) * 1e3
        return cls(float(np.mean(ms)), float(np.median(ms)), float(np.percentile(ms, 99)), int(ms.size))


@dataclass
class BenchmarkRow:
    controller: str
    repetition: int
    timing: TimingStats
    metrics: Metrics | None
    crashed: bool
    crash_time: float | None
    steps: int
    ratio_to_eer: float | None = None
    rank: int | None = None


@dataclass
class BenchmarkTable:
    scenario: str
    rows: list[BenchmarkRow]

    def summary(self) -> dict[str, TimingStats]:
        """Timing pooled over repetitions, per controller."""
        out = {}
        for name in dict.fromkeys(r.controller for r in self.rows):
            # pooled means/medians of per-run statistics
            rs = [r for r in self.rows if r.controller == name]
            out[name] = TimingStats(
                float(np.mean([r.timing.mean_ms for r in rs])),
                float(np.median([r.timing.median_ms for r in rs])),
                float(np.max([r.timing.p99_ms for r in rs])),
                int(sum(r.timing.steps for r in rs)),
            )
        return out

    def ratio(self, num: str, den: str) -> float:
        s = self.summary()
        return s[num].mean_ms / s[den].mean_ms

    def ordering(self) -> list[str]:
        s = self.summary()
        return sorted(s, key=lambda k: s[k].median_ms)

    RUN_HEADER = ("controller", "rep", "steps", "crashed", "crash_time_s", "mean_ms", "median_ms", "p99_ms",
                  "ratio_mean_to_eer", "rank_by_median", "mae_dx_m", "mae_dy_m", "mae_dz_m", "max_abs_dz_m",
                  "z_overshoot_m")
    SUMMARY_HEADER = ("controller", "reps", "steps", "crashed_runs", "crash_time_s", "mean_ms", "median_ms",
                      "p99_ms", "ratio_mean_to_eer", "rank_by_median", "mae_dx_m", "mae_dy_m", "mae_dz_m",
                      "max_abs_dz_m", "z_overshoot_m")

    def to_csv(self, fh, manifest: str | None = None, per_run: bool = False) -> None:
        """One row per controller (repetitions pooled), or one per run with ``per_run``.

        Error columns of the pooled row come from the first repetition; the
        simulation is deterministic, so every repetition has the same errors.
        """
        if manifest is not None:
            fh.write(f"# manifest={manifest}\n")
        w = csv.writer(fh, lineterminator="\n")
        if per_run:
            w.writerow(self.RUN_HEADER)
            for r in self.rows:
                w.writerow([r.controller, r.repetition, r.steps, str(r.crashed).lower(),
                            _opt(r.crash_time), _fmt(r.timing.mean_ms), _fmt(r.timing.median_ms),
                            _fmt(r.timing.p99_ms), _opt(r.ratio_to_eer), r.rank, *_metric_cells(r.metrics)])
            return
        w.writerow(self.SUMMARY_HEADER)
        summary = self.summary()
        eer = summary.get("eer")
        order = self.ordering()
        for name, stats in summary.items():
            rs = [r for r in self.rows if r.controller == name]
            first = rs[0]
            w.writerow([name, len(rs), first.steps, sum(r.crashed for r in rs), _opt(first.crash_time),
                        _fmt(stats.mean_ms), _fmt(stats.median_ms), _fmt(stats.p99_ms),
                        _opt(None if eer is None else stats.mean_ms / eer.mean_ms),
                        order.index(name) + 1, *_metric_cells(first.metrics)])


def _opt(v: float | None) -> str:
    return "n/a" if v is None else _fmt(v)


def _metric_cells(m: Metrics | None) -> list[str]:
    if m is None:
        return ["n/a"] * 5
    return [_fmt(m.mae_dx), _fmt(m.mae_dy), _fmt(m.mae_dz), _fmt(m.max_abs_dz), _fmt(m.z_overshoot)]


def benchmark_controllers(scenario: Scenario, controllers: Sequence[str], repetitions: int = 1,
                          window: ConvergenceWindow | None = None) -> BenchmarkTable:
    """Closed-loop runs of each controller on the same scenario.

    Error metrics use all records (fidelity mode). A run whose error window
    is empty (crash, or ``d_x`` never settles) reports no error metrics.
    """
    if repetitions < 1:
        raise ConfigurationError("repetitions must be >= 1")
    unknown = [c for c in controllers if c not in CONTROLLERS]
    if unknown:
        raise ConfigurationError(f"unknown controllers {unknown}; expected a subset of {CONTROLLERS}")
    rows = []
    for name in controllers:
        for rep in range(repetitions):
            trace = run_closed_loop(replace(scenario, controller=name))
            try:
                m = compute_metrics(trace, window or scenario.window, include_flagged=True)
            except MetricsError:
                m = None
            rows.append(BenchmarkRow(name, rep, TimingStats.from_seconds(trace.compute_time), m,
                                     trace.crashed, trace.crash_time, len(trace)))
    table = BenchmarkTable(scenario.name, rows)
    _annotate(table)
    return table


def _annotate(table: BenchmarkTable) -> None:
    summary = table.summary()
    order = table.ordering()
    eer = summary.get("eer")
    for r in table.rows:
        r.rank = order.index(r.controller) + 1
        if eer is not None:
            r.ratio_to_eer = r.timing.mean_ms / eer.mean_ms


def replay_latency(scenario: Scenario, controllers: Sequence[str], steps: int = 500,
                   reference: str = "eer") -> BenchmarkTable:
    """Time every controller on the same state sequence.

    The sequence is the closed-loop trajectory of ``reference`` (extended
    with further runs if it is shorter than ``steps``). Each controller keeps
    its warm cache across the sequence, as it would in closed loop, but its
    outputs are not fed back, so a controller that would crash in closed loop
    is still timed on ``steps`` updates.
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    duration = max(scenario.duration, steps * scenario.control_period)
    ref = run_closed_loop(replace(scenario, controller=reference, duration=duration))
    states = [InertialState.from_vector(v) for v in ref.x[:steps]]
    times = list(ref.t[:steps])
    if len(states) < steps:
        raise ConfigurationError(f"reference run crashed after {len(states)} steps; cannot replay {steps}")
    ctls = [make_controller(name, scenario) for name in controllers]
    for ctl in ctls:
        ctl.reset()
    elapsed = np.empty((len(ctls), steps))
    # interleaved, so background load on the machine hits every controller alike
    for k, (x, t) in enumerate(zip(states, times)):
        for i, ctl in enumerate(ctls):
            t0 = time.perf_counter_ns()
            ctl.step(x, t)
            elapsed[i, k] = (time.perf_counter_ns() - t0) * 1e-9
    rows = [BenchmarkRow(name, 0, TimingStats.from_seconds(elapsed[i]), None, False, None, steps)
            for i, name in enumerate(controllers)]
    table = BenchmarkTable(scenario.name, rows)
    _annotate(table)
    return table


__all__ = [
    "CONTROLLERS",
    "CSV_COLUMNS",
    "BenchmarkRow",
    "BenchmarkTable",
    "ConvergenceWindow",
    "EerSettings",
    "Metrics",
    "NoOpController",
    "PdOnlyController",
    "PdSettings",
    "Scenario",
    "SimTrace",
    "TimingStats",
    "ZeroController",
    "benchmark_controllers",
    "compute_metrics",
    "convergence_time",
    "make_controller",
    "replay_latency",
    "run_closed_loop",
    "LEVEL",
]
