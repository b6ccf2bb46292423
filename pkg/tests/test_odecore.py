import numpy as np
import pytest
from scipy.linalg import expm

from mflq import SolveStatus, integrate_backward, residual_check, sup_distance


def test_scalar_exponential_dense_output():
    # d/dt x = a x with x(T) = 1 has x(t) = exp(a (t - T))
    a = -0.7
    out = integrate_backward(
        lambda t, b: {"x": a * b["x"]},
        {"x": np.array(1.0)}, 3.0, rtol=1e-10, atol=1e-12)
    assert out.ok and out.status is SolveStatus.SOLVED
    traj = out.trajectories["x"]
    ts = np.linspace(0.0, 3.0, 357)
    exact = np.exp(a * (ts - 3.0))
    got = np.array([float(traj.eval(t)) for t in ts])
    assert np.max(np.abs(got - exact)) < 1e-9


def test_matrix_linear_system_vs_expm():
    M = np.array([[0.1, 0.8], [-0.4, -0.2]])
    T = 2.0
    XT = np.array([[1.0, 0.2], [0.2, 2.0]])
    out = integrate_backward(
        lambda t, b: {"X": M @ b["X"]},
        {"X": XT}, T, rtol=1e-11, atol=1e-13)
    traj = out.trajectories["X"]
    for t in (0.0, 0.37, 1.5, T):
        exact = expm(M * (t - T)) @ XT
        assert np.max(np.abs(traj.eval(t) - exact)) < 1e-9


def test_grid_forward_time_and_endpoints():
    out = integrate_backward(
        lambda t, b: {"x": -b["x"]},
        {"x": np.array(2.0)}, 1.5)
    traj = out.trajectories["x"]
    assert traj.grid[0] == 0.0 and traj.grid[-1] == 1.5
    assert np.all(np.diff(traj.grid) > 0)
    assert float(traj.terminal_value) == 2.0
    np.testing.assert_allclose(float(traj.t0_value),
                               2.0 * np.exp(1.5), rtol=1e-8)


def test_eval_many_matches_eval():
    out = integrate_backward(
        lambda t, b: {"x": np.sin(t) * b["x"]},
        {"x": np.array(1.0)}, 2.0)
    traj = out.trajectories["x"]
    ts = np.linspace(0.0, 2.0, 57)
    many = traj.eval_many(ts)
    single = np.array([traj.eval(t) for t in ts])
    np.testing.assert_array_equal(many, single)


def test_symmetric_projection():
    # rhs injects asymmetry on purpose; the solver must project it away
    J = np.array([[0.0, 0.3], [-0.3, 0.0]])

    def rhs(t, b):
        return {"X": b["X"] @ J + 0.1 * b["X"]}

    out = integrate_backward(rhs, {"X": np.eye(2)}, 1.0, symmetric=("X",))
    for v in out.trajectories["X"].values:
        assert np.max(np.abs(v - v.T)) < 1e-14


def test_blow_up_detection():
    # backward flow of d/dt x = -x^2 from x(T)=1 escapes one unit earlier
    out = integrate_backward(
        lambda t, b: {"x": -b["x"] ** 2},
        {"x": np.array(1.0)}, 2.0, max_norm=1e6)
    assert not out.ok
    assert out.status is SolveStatus.BLOW_UP
    assert 0.9 < out.failure_time < 1.05
    # partial trajectory still covers [t_fail, T]
    traj = out.trajectories["x"]
    assert traj.grid[0] >= out.failure_time - 1e-9
    assert traj.grid[-1] == 2.0


def test_positivity_event():
    # constraint value is 1 + t - T along the exact solution: crosses 0 at T-1
    out = integrate_backward(
        lambda t, b: {"x": np.array(1.0)},
        {"x": np.array(1.0)}, 3.0,
        pos_constraints=[("margin", lambda b: np.atleast_2d(b["x"]))])
    assert not out.ok
    assert out.status is SolveStatus.POSITIVITY_VIOLATION
    assert out.failed_constraint == "margin"
    # localized to within the accepting step, not root-found
    assert abs(out.failure_time - 2.0) < 0.05
    assert "margin" in out.margins


def test_follow_grid():
    lead = integrate_backward(
        lambda t, b: {"x": -2.0 * b["x"]},
        {"x": np.array(1.0)}, 1.0)
    follow = integrate_backward(
        lambda t, b: {"y": -2.0 * b["y"]},
        {"y": np.array(1.0)}, 1.0, follow_grid=lead.grid)
    # every leader node is hit; the follower may refine in between
    missing = np.setdiff1d(lead.grid, follow.grid)
    assert missing.size == 0
    d = sup_distance(lead.trajectories["x"], follow.trajectories["y"])
    assert d < 1e-7


def test_residual_check_small_on_solution():
    out = integrate_backward(
        lambda t, b: {"x": np.cos(3.0 * t) * b["x"]},
        {"x": np.array(1.0)}, 2.0, rtol=1e-10, atol=1e-12)
    # bounded by central-difference truncation, not solver error
    res = residual_check(out.trajectories["x"],
                         lambda t, v: np.cos(3.0 * t) * v, num=2001)
    assert res < 1e-5


def test_sup_distance_self_is_zero():
    out = integrate_backward(
        lambda t, b: {"x": -b["x"]}, {"x": np.array(1.0)}, 1.0)
    assert sup_distance(out.trajectories["x"], out.trajectories["x"]) == 0.0


def test_rhs_exception_degrades_to_step_failure():
    # singular-inverse style failures reject the step and shrink it until
    # the integrator gives up cleanly instead of propagating the exception
    def rhs(t, b):
        if t < 0.5:
            raise ArithmeticError("synthetic")
        return {"x": -b["x"]}

    out = integrate_backward(rhs, {"x": np.array(1.0)}, 1.0)
    assert not out.ok
    assert out.status is SolveStatus.STEP_FAILURE
    assert out.failure_time <= 0.6
