import numpy as np
import pytest

from quadtarget.nlp import NlpOptions, lagrangian_gradient, solve_augmented_lagrangian


def quad_obj(z):
    return float(z @ z), 2.0 * z


def line_con(z):
    return np.array([z[0] + z[1] - 1.0]), np.array([[1.0, 1.0]])


def circle_obj(z):
    # min x + y on the unit circle -> (-1/sqrt2, -1/sqrt2)
    return float(z[0] + z[1]), np.array([1.0, 1.0])


def circle_con(z):
    return np.array([z @ z - 1.0]), 2.0 * z[None, :]


def circle_curv(z, w):
    return 2.0 * w[0] * np.eye(2)


@pytest.mark.parametrize("curvature", [None, lambda z, w: 2.0 * np.eye(2)])
def test_equality_qp(curvature):
    sol = solve_augmented_lagrangian(quad_obj, line_con, np.array([3.0, -1.0]), curvature=curvature)
    assert sol.converged
    np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-6)
    # multiplier of x + y = 1 for f = |z|^2 is -1
    assert sol.multipliers[0] == pytest.approx(-1.0, abs=1e-5)


@pytest.mark.parametrize("curvature", [None, circle_curv])
def test_nonlinear_constraint(curvature):
    sol = solve_augmented_lagrangian(circle_obj, circle_con, np.array([0.3, -0.8]), curvature=curvature)
    assert sol.converged
    np.testing.assert_allclose(sol.x, [-2**-0.5, -2**-0.5], atol=1e-5)


def test_reported_convergence_is_sound():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x0 = rng.normal(size=2)
        sol = solve_augmented_lagrangian(circle_obj, circle_con, x0, curvature=circle_curv)
        if not sol.converged:
            continue
        c, _ = circle_con(sol.x)
        opts = NlpOptions()
        assert np.max(np.abs(c)) < opts.ctol
        assert np.max(np.abs(lagrangian_gradient(circle_obj, circle_con, sol.x, sol.multipliers))) < opts.gtol


def test_outer_budget_exhaustion():
    sol = solve_augmented_lagrangian(circle_obj, circle_con, np.array([3.0, 2.0]),
                                     NlpOptions(max_outer=1, max_inner=2, polish_threshold=0.0))
    assert not sol.converged
    assert sol.message == "outer iteration limit"
    assert np.all(np.isfinite(sol.x))


def test_time_budget_exhaustion():
    sol = solve_augmented_lagrangian(circle_obj, circle_con, np.array([3.0, 2.0]),
                                     NlpOptions(time_budget=0.0, polish_threshold=0.0))
    assert not sol.converged
    assert sol.message == "time budget exhausted"


def test_warm_start_at_solution():
    first = solve_augmented_lagrangian(circle_obj, circle_con, np.array([0.3, -0.8]), curvature=circle_curv)
    again = solve_augmented_lagrangian(circle_obj, circle_con, first.x, multipliers=first.multipliers,
                                       penalty=first.penalty, curvature=circle_curv)
    assert again.converged and again.iterations <= 2


def test_deterministic():
    a = solve_augmented_lagrangian(circle_obj, circle_con, np.array([0.3, -0.8]))
    b = solve_augmented_lagrangian(circle_obj, circle_con, np.array([0.3, -0.8]))
    np.testing.assert_array_equal(a.x, b.x)
    assert (a.iterations, a.inner_iterations) == (b.iterations, b.inner_iterations)
