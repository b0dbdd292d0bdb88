"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured numbers
(shown with ``pytest -s`` or in the terminal summary), then asserts. Run the
file directly for the report alone::

    python3 tests/test_acceptance.py
"""

import math
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from quadtarget.bvp import BvpController, hamiltonian, solve_tpbvp, stationarity_control
from quadtarget.care import LinearPlant, care_residual, lqr_gain, solve_care
from quadtarget.config import SHIPPED, resolve_config
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
from quadtarget.simulator import ConvergenceWindow, compute_metrics, make_controller, replay_latency, run_closed_loop
from quadtarget.spectral import lg_grid

SAMPLES = 1000
RESULTS: list[str] = []


@pytest.fixture
def report(capsys):
    def emit(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        RESULTS.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return emit


def _samples(seed):
    rng = np.random.default_rng(seed)
    for _ in range(SAMPLES):
        x = InertialState(rng.uniform(-10, 10, 3), rng.uniform(-5, 5, 3), rng.uniform(-5, 5, 3))
        yield rng, x, Attitude(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6))


def test_care_correctness(report):
    t0 = time.perf_counter()
    di = LinearPlant(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]))
    K = lqr_gain(solve_care(di, np.diag([1.0, 0.0]), 1.0), di.B, 1.0)
    k_err = float(np.max(np.abs(K - [-1.0, -math.sqrt(2.0)])))
    worst_res, worst_eig = 0.0, -math.inf
    for q1, q2 in ((SIM_Q1, SIM_Q2), (EXP_Q1, EXP_Q2)):
        for full in (False, True):
            g = make_eer_config(q1, q2, full=full).gains
            worst_res = max(worst_res, care_residual(g.P, g.plant.A, g.plant.B, g.Q1, g.Q2))
            worst_eig = max(worst_eig, float(np.max(g.spectrum.real)))
    wall = time.perf_counter() - t0
    ok = k_err < 1e-9 and worst_res < 1e-9 and worst_eig < 0 and wall < 1.0
    report("CARE correctness", ok,
           f"|K-K*|={k_err:.1e} max residual={worst_res:.1e} max Re(eig)={worst_eig:.3f} wall={wall:.2f}s")


def test_mapping_oracles(report):
    t0 = time.perf_counter()
    params = PlantParams()
    trip = sub = 0.0
    for rng, x, att in _samples(11):
        rs = 3.0 / math.cos(att.pitch)
        back = unmap_virtual_state(virtual_state(x, att, rs), att, rs)
        trip = max(trip, float(np.max(np.abs(back - x.vector[:6]))))
        a_star = rng.uniform(-3.0, 3.0, 3)
        u = recover_input(a_star, x, params)
        sub = max(sub, float(np.max(np.abs(acceleration(u.thrust, u.pitch, u.roll, x.abs_vel, params) - a_star))))
    wall = time.perf_counter() - t0
    ok = trip < 1e-12 and sub < 1e-10 and wall < 1.0
    report("Frame mapping and input recovery", ok, f"round trip={trip:.1e} forward substitution={sub:.1e} wall={wall:.2f}s")


def test_lateral_pd_equivalence(report):
    cfg = make_eer_config(full=True)
    err = 0.0
    for _, x, att in _samples(12):
        a = eer_acceleration(x, Attitude(att.pitch, 0.0), cfg)
        err = max(err, abs(a[1] - pd_lateral(x.rel_pos[1], x.rel_vel[1], 2.0, 3.0)))
    report("Zero-roll lateral PD equivalence", err < 1e-10, f"max deviation={err:.1e} over {SAMPLES} samples")


def test_spectral_machinery(report):
    g = lg_grid(7)
    q = max(abs(g.weights @ g.nodes**k - (1 - (-1) ** (k + 1)) / (k + 1)) for k in range(14))
    d = max(float(np.max(np.abs(g.D @ g.support**k - k * g.nodes ** max(k - 1, 0)))) for k in range(8))
    report("Spectral machinery N=7", q < 1e-12 and d < 1e-10, f"quadrature deg<=13 err={q:.1e} "
           f"differentiation deg<=7 err={d:.1e}")


def _hamiltonian_gradient(sol, cfg):
    u = stationarity_control(sol.x, sol.lam, cfg.weights, cfg.params, cfg.thrust_ref)
    worst, h = 0.0, 1e-3
    for k in range(sol.t.size):
        for i in range(3):
            up, um = u[:, k].copy(), u[:, k].copy()
            up[i] += h
            um[i] -= h
            args = (cfg.weights, cfg.params, cfg.thrust_ref)
            gi = (hamiltonian(sol.x[:, k], sol.lam[:, k], up, *args)
                  - hamiltonian(sol.x[:, k], sol.lam[:, k], um, *args)) / (2 * h)
            worst = max(worst, abs(gi))
    return worst


@pytest.mark.slow
def test_bvp_stationarity(report):
    sc = resolve_config("sim-case1").to_scenario("bvp")
    ctl = make_controller("bvp", sc)
    cfg = ctl.cfg
    cold = solve_tpbvp(InertialState.from_quad_and_target(sc.quad_position, sc.quad_velocity,
                                                          sc.target.state_at(0.0)).vector,
                       cfg.t_f, cfg.weights, params=cfg.params, thrust_ref=cfg.thrust_ref)
    accepted = [cold] if cold.converged else []

    class Recorder(BvpController):
        def step(self, x, t=0.0):
            cmd = super().step(x, t)
            sol = self.cache.get("solution")
            if sol is not None and sol.converged and (not accepted or sol is not accepted[-1]):
                accepted.append(sol)
            return cmd

    run_closed_loop(sc, Recorder(cfg))
    grad = max(_hamiltonian_gradient(s, cfg) for s in accepted)
    lam_tf = max(float(np.max(np.abs(s.lam[:, -1]))) for s in accepted)
    ok = cold.converged and grad < 1e-5 and lam_tf < 1e-6
    report("BVP stationarity", ok, f"{len(accepted)} accepted Case 1 solves, max |dH/du|={grad:.1e} "
           f"max |lam(tf)|={lam_tf:.1e}")


def test_case1_regulation(report):
    sc = resolve_config("sim-case1").to_scenario("eer")
    t0 = time.perf_counter()
    tr = run_closed_loop(sc)
    wall = time.perf_counter() - t0
    inside = np.abs(tr.errors[:, 0] - 3.0) <= 0.05
    # first record after which d_x never leaves [2.95, 3.05]
    outside = np.flatnonzero(~inside)
    settle = 0.0 if outside.size == 0 else (tr.t[outside[-1] + 1] if outside[-1] + 1 < len(tr) else math.inf)
    steady = tr.t >= 10.0
    dz = float(np.max(np.abs(tr.errors[steady, 2])))
    m = compute_metrics(tr, sc.window)
    ok = (not tr.crashed and len(tr) == 1000 and settle <= 10.0 and dz < 0.05 and m.z_overshoot < 0.05
          and wall < 10.0)
    report("Case 1 regulation", ok, f"d_x held in [2.95, 3.05] from t={settle:.2f}s, max |d_z| (t>=10s)={dz:.1e} m, "
           f"z_q overshoot={m.z_overshoot:.3f} m, wall={wall:.1f}s")


@pytest.mark.slow
def test_case2_comparison(report):
    # both controllers over the same window so the MAEs cover the same target motion
    window = ConvergenceWindow(start=10.0)
    mae = {}
    for ctl in ("eer", "gpm"):
        tr = run_closed_loop(resolve_config("sim-case2").to_scenario(ctl))
        assert not tr.crashed
        mae[ctl] = compute_metrics(tr, window, include_flagged=True).mae_dz
    report("Case 2 EER vs GPM", mae["eer"] < mae["gpm"],
           f"MAE(d_z) t>=10s: eer={mae['eer']:.4f} m gpm={mae['gpm']:.4f} m")


@pytest.mark.slow
def test_latency_ordering(report):
    t0 = time.perf_counter()
    table = replay_latency(resolve_config("sim-case1").to_scenario(), ["eer", "bvp", "gpm"], steps=500)
    wall = time.perf_counter() - t0
    s = table.summary()
    ratio = table.ratio("gpm", "eer")
    order = s["eer"].median_ms < s["bvp"].median_ms < s["gpm"].median_ms
    ok = order and ratio > 20 and s["eer"].mean_ms < 1.0 and wall < 120.0
    report("Latency ordering and ratio", ok,
           f"median eer={s['eer'].median_ms:.3f} bvp={s['bvp'].median_ms:.3f} gpm={s['gpm'].median_ms:.3f} ms, "
           f"mean gpm/eer={ratio:.0f}, mean eer={s['eer'].mean_ms:.3f} ms, wall={wall:.1f}s")


@pytest.mark.slow
def test_crash_path_fidelity(report):
    cfg = resolve_config("exp-case2")
    bvp_sc = cfg.to_scenario("bvp")
    bvp_sc = replace(bvp_sc, bvp=replace(bvp_sc.bvp, thrust_offset=False))
    bvp = run_closed_loop(bvp_sc)
    eer_sc = cfg.to_scenario("eer")
    eer = run_closed_loop(eer_sc)
    m = compute_metrics(eer, eer_sc.window)
    steady = eer.t >= m.window_start
    dy = float(np.max(np.abs(eer.errors[steady, 1])))
    dz = float(np.max(np.abs(eer.errors[steady, 2])))
    if bvp.crashed:
        bvp_ok, bvp_note = True, f"bvp (offset off) crashed at t={bvp.crash_time:.2f}s"
    else:
        mb = compute_metrics(bvp, eer_sc.window, include_flagged=True)
        bvp_ok = mb.mae_dz >= 2 * m.mae_dz
        bvp_note = f"bvp MAE(d_z)={mb.mae_dz:.3f} vs eer {m.mae_dz:.3f}"
    ok = bvp_ok and not eer.crashed and dy <= 0.2 and dz <= 0.3
    report("Crash-path fidelity", ok, f"{bvp_note}; eer completed, steady max |d_y|={dy:.3f} m "
           f"max |d_z|={dz:.3f} m from t={m.window_start:.2f}s")


@pytest.mark.slow
def test_determinism(report):
    mismatched = []
    runs = [(name, None, None) for name in SHIPPED]
    runs += [("sim-case1", "gpm", 3.0), ("sim-case1", "bvp", 3.0)]
    for name, ctl, duration in runs:
        sc = resolve_config(name).to_scenario(ctl)
        if duration is not None:
            sc = replace(sc, duration=duration)
        a = run_closed_loop(sc).csv_text(include_timing=False)
        b = run_closed_loop(sc).csv_text(include_timing=False)
        if a != b:
            mismatched.append(f"{name}/{sc.controller}")
    report("Determinism", not mismatched,
           f"{len(runs)} scenario/controller pairs, identical traces modulo timing"
           + (f"; mismatched: {mismatched}" if mismatched else ""))


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    print("\n".join(RESULTS))
    sys.exit(code)
