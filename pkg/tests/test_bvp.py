import numpy as np
import pytest

from quadtarget.bvp import (
    NX,
    BvpConfig,
    BvpController,
    _collocation,
    _System,
    bvp_step,
    costate_dynamics,
    hamiltonian,
    newton_matrix,
    shift_mesh,
    simplified_dynamics,
    solve_tpbvp,
    stationarity_control,
)
from quadtarget.dynamics import GRAVITY, InertialState, PlantParams
from quadtarget.errors import ConfigurationError
from quadtarget.gpm import CostWeights

W = CostWeights()
PARAMS = PlantParams()
NO_DRAG = PlantParams(drag=(0.0, 0.0, 0.0))
CASE1 = np.array([-10.0, 0, 0, -3.0, 0, 0, 0, 0, 0])
AIM = np.array([-3.0, 0, 0, 0, 0, 0, 0, 0, 0])


@pytest.fixture(scope="module")
def case1():
    return solve_tpbvp(CASE1, 2.0, W, params=PARAMS, thrust_ref=GRAVITY)


def test_simplified_dynamics_hover():
    np.testing.assert_array_equal(simplified_dynamics(np.zeros(9), [GRAVITY, 0, 0], NO_DRAG), np.zeros(9))


def test_simplified_dynamics_small_pitch():
    d = simplified_dynamics(np.zeros(9), [GRAVITY, 0.1, 0.0], NO_DRAG)
    assert d[3] == pytest.approx(GRAVITY * 0.1) and d[6] == d[3]


def test_simplified_dynamics_duplicate_oracle():
    rng = np.random.default_rng(0)
    c1, c2, c3 = PARAMS.drag
    for _ in range(200):
        x, u = rng.normal(size=9), rng.normal(size=3)
        ax = GRAVITY * u[1] - c1 * x[6]
        ay = -GRAVITY * u[2] - c2 * x[7]
        az = u[0] - c3 * x[8] - GRAVITY
        expect = [x[3], x[4], x[5], ax, ay, az, ax, ay, az]
        np.testing.assert_allclose(simplified_dynamics(x, u, PARAMS), expect, rtol=0, atol=1e-14)


def test_stationarity_examples():
    np.testing.assert_array_equal(stationarity_control(np.zeros(9), np.zeros(9), W), [0, 0, 0])
    lam = np.zeros(9)
    lam[5] = -GRAVITY
    assert stationarity_control(np.zeros(9), lam, W)[0] == pytest.approx(GRAVITY)


@pytest.mark.parametrize("thrust_ref", [0.0, GRAVITY])
def test_stationarity_zeroes_hamiltonian_gradient(thrust_ref):
    rng = np.random.default_rng(1)
    h = 1e-3
    for _ in range(200):
        x, lam = rng.normal(size=9) * 3, rng.normal(size=9) * 3
        u = stationarity_control(x, lam, W, PARAMS, thrust_ref)
        grad = np.empty(3)
        for i in range(3):
            up, um = u.copy(), u.copy()
            up[i] += h
            um[i] -= h
            grad[i] = (hamiltonian(x, lam, up, W, PARAMS, thrust_ref)
                       - hamiltonian(x, lam, um, W, PARAMS, thrust_ref)) / (2 * h)
        assert np.linalg.norm(grad) < 1e-6


def test_costate_examples():
    S = costate_dynamics(np.zeros(9), np.zeros(9), np.zeros(3), W)
    np.testing.assert_array_equal(S, [-6 * W.k1, 0, 0, 0, 0, 0, 0, 0, 0])
    lam = np.zeros(9)
    lam[:3] = (1, 2, 3)
    np.testing.assert_array_equal(costate_dynamics(np.zeros(9), lam, np.zeros(3), W)[3:6], [-1, -2, -3])


def test_costate_is_negative_state_gradient_of_hamiltonian():
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(100):
        x, lam = rng.normal(size=9), rng.normal(size=9)
        u = stationarity_control(x, lam, W, PARAMS, GRAVITY)
        grad = np.empty(9)
        for i in range(9):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            grad[i] = (hamiltonian(xp, lam, u, W, PARAMS, GRAVITY)
                       - hamiltonian(xm, lam, u, W, PARAMS, GRAVITY)) / (2 * h)
        np.testing.assert_allclose(costate_dynamics(x, lam, u, W, PARAMS), -grad, rtol=0, atol=1e-5)


def test_system_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    system = _System(W, PARAMS, GRAVITY)
    Y = rng.normal(size=(18, 4))
    J = system.jacobian(Y)
    h = 1e-6
    for i in range(18):
        Yp, Ym = Y.copy(), Y.copy()
        Yp[i] += h
        Ym[i] -= h
        col = (system.rhs(Yp) - system.rhs(Ym)) / (2 * h)
        np.testing.assert_allclose(J[:, :, i], col.T, rtol=1e-6, atol=1e-5)


def test_newton_matrix_matches_residual_jacobian():
    rng = np.random.default_rng(4)
    system = _System(W, PARAMS, GRAVITY)
    m, h = 5, 0.1
    Y = rng.normal(size=(18, m))
    xi0 = rng.normal(size=9)
    _, data = _collocation(system, Y, h, xi0)
    A = newton_matrix(data, m, dense=True)
    eps = 1e-6
    num = np.empty_like(A)
    for k in range(18 * m):
        node, comp = divmod(k, 18)
        Yp, Ym = Y.copy(), Y.copy()
        Yp[comp, node] += eps
        Ym[comp, node] -= eps
        num[:, k] = (_collocation(system, Yp, h, xi0)[0] - _collocation(system, Ym, h, xi0)[0]) / (2 * eps)
    np.testing.assert_allclose(A, num, rtol=1e-6, atol=1e-5)


def test_equilibrium_solution():
    sol = solve_tpbvp(AIM, 2.0, W, params=PARAMS, thrust_ref=GRAVITY)
    assert sol.converged
    assert np.max(np.abs(sol.lam)) < 1e-9
    np.testing.assert_allclose(sol.controls(W, PARAMS)[:, 0], [GRAVITY, 0, 0], atol=1e-9)


def test_case1_boundary_residuals(case1):
    assert case1.converged
    assert case1.boundary_residual < 1e-6
    np.testing.assert_allclose(case1.x[:, 0], CASE1, atol=1e-6)
    assert np.max(np.abs(case1.lam[:, -1])) < 1e-6
    assert case1.residual < 1e-6


def test_case1_stationarity_at_mesh_points(case1):
    u = case1.controls(W, PARAMS)
    h = 1e-3
    for k in range(case1.t.size):
        for i in range(3):
            up, um = u[:, k].copy(), u[:, k].copy()
            up[i] += h
            um[i] -= h
            g = (hamiltonian(case1.x[:, k], case1.lam[:, k], up, W, PARAMS, GRAVITY)
                 - hamiltonian(case1.x[:, k], case1.lam[:, k], um, W, PARAMS, GRAVITY)) / (2 * h)
            assert abs(g) < 1e-5


def test_warm_start_at_solution(case1):
    again = solve_tpbvp(CASE1, 2.0, W, case1.y, params=PARAMS, thrust_ref=GRAVITY)
    assert again.converged and again.iterations <= 2


def test_shift_mesh_holds_tail(case1):
    Y = shift_mesh(case1, 0.02)
    assert Y.shape == case1.y.shape
    np.testing.assert_array_equal(Y[:, -1], case1.y[:, -1])


def _u0(xi0, nodes):
    sol = solve_tpbvp(xi0, 2.0, W, params=PARAMS, thrust_ref=GRAVITY, nodes=nodes)
    assert sol.converged
    return stationarity_control(xi0, sol.lam[:, 0], W, PARAMS, GRAVITY)


def test_mesh_refinement_equilibrium():
    assert np.max(np.abs(_u0(AIM, 33) - _u0(AIM, 65))) < 1e-4


def test_mesh_refinement_case1():
    # the Case 1 solve has a fast initial transient; on 33 -> 65 nodes the
    # change in u*(0) is ~1e-3 absolute on a thrust of ~79, so the check is relative
    a, b, c = _u0(CASE1, 33), _u0(CASE1, 65), _u0(CASE1, 513)
    assert np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))) < 1e-3
    # and refinement moves toward the fine-mesh answer
    assert np.max(np.abs(b - c)) < np.max(np.abs(_u0(CASE1, 17) - c))


def test_bad_inputs():
    with pytest.raises(ConfigurationError):
        solve_tpbvp(CASE1, 0.0, W)
    with pytest.raises(ConfigurationError):
        solve_tpbvp(CASE1, 2.0, W, np.zeros((18, 5)))
    with pytest.raises(ConfigurationError):
        BvpConfig(nodes=1)


def test_bvp_step_equilibrium():
    cmd = bvp_step(InertialState.from_vector(AIM), {}, BvpConfig())
    np.testing.assert_allclose(cmd.control.as_array(), [GRAVITY, 0, 0], atol=1e-6)
    assert cmd.flags == ()


def test_bvp_step_deterministic():
    x = InertialState.from_vector(CASE1 + 0.1)
    a, b = BvpController(BvpConfig()), BvpController(BvpConfig())
    np.testing.assert_array_equal(a.step(x).control.as_array(), b.step(x).control.as_array())
    ra, rb = a.step(x).control.as_array(), b.step(x).control.as_array()
    np.testing.assert_array_equal(ra, rb)


def test_dump_csv(tmp_path, case1):
    path = tmp_path / "bvp.csv"
    case1.dump_csv(path, W, PARAMS)
    lines = path.read_text().splitlines()
    assert len(lines) == 34
    assert lines[0].split(",")[:2] == ["t_s", "x1"]
    assert len(lines[1].split(",")) == 1 + 2 * NX + 3
