import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from quadtarget.dynamics import (
    GRAVITY,
    LEVEL,
    Attitude,
    InertialState,
    PlantParams,
    TargetMotion,
    acceleration,
    rotation_matrix,
)
from quadtarget.eer import (
    SATURATED,
    EerController,
    Limits,
    desired_acceleration,
    eer_acceleration,
    eer_step,
    make_eer_config,
    pd_lateral,
    r_star,
    recover_input,
    reduce_virtual_state,
    unmap_virtual_state,
    virtual_control,
    virtual_state,
)
from quadtarget.errors import ConfigurationError, SaturationError

AIM = InertialState([-3.0, 0.0, 0.0], np.zeros(3), np.zeros(3))


@pytest.fixture(scope="module")
def cfg():
    return make_eer_config()


def test_virtual_state_at_aim_is_zero():
    np.testing.assert_array_equal(virtual_state(AIM, LEVEL, 3.0), np.zeros(6))


def test_virtual_state_identity_attitude():
    x = InertialState([1.0, 2.0, 3.0], [4.0, 5.0, 6.0], np.zeros(3))
    np.testing.assert_array_equal(virtual_state(x, LEVEL, 2.5), [3.5, 2, 3, 4, 5, 6])
    np.testing.assert_array_equal(reduce_virtual_state(virtual_state(x, LEVEL, 2.5)), [3.5, 3, 4, 6])


@given(st.lists(st.floats(-100, 100), min_size=6, max_size=6), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5),
       st.floats(0.1, 10))
def test_mapping_round_trip(x6, pitch, roll, rs):
    x = InertialState(x6[:3], x6[3:], np.zeros(3))
    att = Attitude(pitch, roll)
    back = unmap_virtual_state(virtual_state(x, att, rs), att, rs)
    np.testing.assert_allclose(back, x6, rtol=0, atol=1e-12 * max(1.0, max(map(abs, x6)) + rs))


def test_r_star():
    assert r_star(0.0) == 3.0
    assert r_star(math.pi / 3) == pytest.approx(6.0)
    assert r_star(0.2, "constant") == 3.0
    with pytest.raises(ValueError):
        r_star(0.1, "weird")


def test_virtual_control_linearity(cfg):
    K = cfg.gains.K
    np.testing.assert_array_equal(virtual_control(K, np.zeros(4)), np.zeros(2))
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1.0
        np.testing.assert_array_equal(virtual_control(K, e), K[:, j])


def test_virtual_control_case1_duplicate_arithmetic(cfg):
    x = InertialState([-10, 0, 0], [-3, 0, 0], np.zeros(3))
    xe = reduce_virtual_state(virtual_state(x, LEVEL, 3.0))
    K = cfg.gains.K
    manual = [sum(K[i, j] * xe[j] for j in range(4)) for i in range(2)]
    np.testing.assert_allclose(virtual_control(K, xe), manual, rtol=1e-15)


def test_desired_acceleration_rotation():
    np.testing.assert_array_equal(desired_acceleration(LEVEL, [1.0, 2.0, 3.0]), [1, 2, 3])
    np.testing.assert_array_equal(desired_acceleration(Attitude(0.3, 0.1), np.zeros(3)), np.zeros(3))
    rng = np.random.default_rng(0)
    for _ in range(100):
        ue = rng.normal(size=3)
        a = desired_acceleration(Attitude(*rng.uniform(-1.4, 1.4, 2)), ue)
        assert np.linalg.norm(a) == pytest.approx(np.linalg.norm(ue), abs=1e-12)


def test_pd_lateral():
    assert pd_lateral(0.0, 0.0, 2.0, 3.0) == 0.0
    # quad 1 m to +y of the target: pulled back toward -y
    assert pd_lateral(1.0, 0.0, 2.0, 3.0) == -2.0
    with pytest.raises(ValueError):
        pd_lateral(1.0, 0.0, -2.0, 3.0)


def test_pd_lateral_closed_loop_converges():
    sol = solve_ivp(lambda t, y: [y[1], pd_lateral(y[0], y[1], 2.0, 3.0)], (0, 10), [1.0, 0.0],
                    rtol=1e-10, atol=1e-12)
    assert abs(sol.y[0, -1]) < 1e-3 and abs(sol.y[1, -1]) < 1e-3


def test_recover_hover():
    u = recover_input(np.zeros(3), InertialState.from_vector(np.zeros(9)), PlantParams())
    assert (u.thrust, u.pitch, u.roll) == (GRAVITY, 0.0, 0.0)


def test_recover_45_degrees():
    u = recover_input([GRAVITY, 0, 0], InertialState.from_vector(np.zeros(9)), PlantParams(drag=(0, 0, 0)))
    assert u.thrust == pytest.approx(GRAVITY * math.sqrt(2))
    assert u.pitch == pytest.approx(math.pi / 4)
    assert u.roll == 0.0


def test_recover_forward_substitution():
    rng = np.random.default_rng(5)
    params = PlantParams(drag=(0.1, 0.1, 0.1))
    for _ in range(1000):
        x = InertialState.from_vector(rng.uniform(-5, 5, 9))
        a_star = rng.uniform(-4, 4, 3)
        u = recover_input(a_star, x, params)
        a = acceleration(u.thrust, u.pitch, u.roll, x.abs_vel, params)
        np.testing.assert_allclose(a, a_star, rtol=0, atol=1e-10)


def test_recover_relative_drag_variant():
    x = InertialState(np.zeros(3), [1.0, 0, 0], [4.0, 0, 0])
    params = PlantParams()
    u_abs = recover_input(np.zeros(3), x, params)
    u_rel = recover_input(np.zeros(3), x, params, drag_velocity="relative")
    assert u_abs.pitch == pytest.approx(math.atan(0.4 / GRAVITY))
    assert u_rel.pitch == pytest.approx(math.atan(0.1 / GRAVITY))


def test_recover_saturation():
    x = InertialState.from_vector(np.zeros(9))
    with pytest.raises(SaturationError):
        recover_input([0, 0, -2 * GRAVITY], x, PlantParams())


def test_eer_step_equilibrium(cfg):
    cmd = eer_step(AIM, LEVEL, cfg)
    assert cmd.control.thrust == pytest.approx(GRAVITY, abs=1e-12)
    assert abs(cmd.control.pitch) < 1e-12 and abs(cmd.control.roll) < 1e-12
    assert cmd.flags == ()


def test_eer_step_case1_pitches_forward(cfg):
    tgt = TargetMotion().state_at(0.0)
    x = InertialState.from_quad_and_target([-10, 0, 0.61], [0, 0, 0], tgt)
    cmd = eer_step(x, LEVEL, cfg)
    assert cmd.control.pitch > 0


def test_eer_step_saturates_and_flags(cfg):
    x = InertialState([-100, 0, 0], [-30, 0, 0], np.zeros(3))
    cmd = eer_step(x, LEVEL, cfg)
    assert SATURATED in cmd.flags
    assert abs(cmd.control.pitch) <= cfg.limits.pitch


def test_eer_step_deterministic(cfg):
    x = InertialState([-7.3, 0.4, 0.2], [-1.1, 0.3, -0.2], [1.9, 0.3, -0.2])
    att = Attitude(0.21, -0.05)
    ref = eer_step(x, att, cfg).control.as_array()
    for _ in range(100_000):
        out = eer_step(x, att, cfg).control
    np.testing.assert_array_equal(out.as_array(), ref)


def test_reduced_lateral_is_pd(cfg):
    rng = np.random.default_rng(9)
    for _ in range(200):
        x = InertialState.from_vector(rng.normal(size=9))
        att = Attitude(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5))
        a = eer_acceleration(x, att, cfg)
        assert a[1] == pytest.approx(pd_lateral(x.rel_pos[1], x.rel_vel[1], 2.0, 3.0), abs=1e-12)


def test_full_lateral_uses_gain_entries():
    full = make_eer_config(full=True)
    K = full.gains.K
    rng = np.random.default_rng(10)
    for _ in range(1000):
        x = InertialState.from_vector(rng.normal(size=9) * 3)
        a = eer_acceleration(x, Attitude(rng.uniform(-0.5, 0.5), 0.0), full)
        assert a[1] == pytest.approx(K[1, 1] * x.rel_pos[1] + K[1, 4] * x.rel_vel[1], abs=1e-10)


def test_controller_tracks_previous_attitude(cfg):
    ctl = EerController(cfg)
    x = InertialState([-6, 0, 0], [-1, 0, 0], np.zeros(3))
    first = ctl.step(x)
    assert ctl.attitude == first.control.attitude
    ctl.reset()
    assert ctl.attitude == LEVEL


def test_config_validation():
    with pytest.raises(ConfigurationError):
        make_eer_config(kp=-1.0)
    with pytest.raises(ConfigurationError):
        make_eer_config(r_star_mode="bogus")
    with pytest.raises(ConfigurationError):
        Limits(pitch=2.0)
    with pytest.raises(ConfigurationError):
        Limits(thrust_min_g=3.0)


def test_rotation_used_is_body_to_inertial():
    att = Attitude(0.4, 0.0)
    # positive pitch tilts the thrust axis toward +x
    assert (rotation_matrix(att) @ [0, 0, 1])[0] > 0
