"""Generic solver pieces checked on linear-quadratic problems with known answers."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import solve_continuous_are

from quadmintime.cost import BarrierParams
from quadmintime.errors import DivergedProjectionError, LineSearchError
from quadmintime.pronto import (
    Curve,
    DescentDirection,
    GainSchedule,
    Trajectory,
    cost,
    design_gain,
    line_search,
    project,
    search_direction,
    solve_fixed_barrier,
)

from synthetic import LinearQuadratic, scalar_riccati

P0 = BarrierParams()


def zero_curve(prob):
    return Curve(prob.s, np.zeros((prob.n_nodes, prob.nx)), np.zeros((prob.n_nodes, prob.nu)))


def test_scalar_riccati_matches_closed_form():
    a, b, q, r, pL = 0.7, 1.3, 2.0, 0.5, 0.25
    prob = LinearQuadratic([[a]], [[b]], [0.0], 3.0, 1e-2)
    prob.Q_K, prob.R_K, prob.P_L = np.array([[q]]), np.array([[r]]), np.array([[pL]])
    gs = design_gain(prob, zero_curve(prob))
    exact = scalar_riccati(a, b, q, r, pL, prob.s[-1] - prob.s)
    assert np.allclose(gs.P[:, 0, 0], exact, rtol=1e-6)
    assert np.allclose(gs.K[:, 0, 0], b / r * exact, rtol=1e-6)


def test_riccati_approaches_algebraic_solution_on_long_horizon():
    # double integrator per axis, unit weights
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    prob = LinearQuadratic(A, B, [0.0, 0.0], 30.0, 1e-2)
    gs = design_gain(prob, zero_curve(prob))
    Pare = solve_continuous_are(A, B, np.eye(2), np.eye(1))
    mid = prob.n_nodes // 2
    assert np.allclose(gs.P[mid], Pare, rtol=1e-5)
    assert np.allclose(gs.K[mid], B.T @ Pare, rtol=1e-5)
    assert np.max(gs.residual) < 1e-5


def test_newton_step_solves_lq_problem_exactly():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 3)) * 0.5
    B = rng.normal(size=(3, 2))
    n = 201
    xr = rng.normal(size=(n, 3))
    ur = rng.normal(size=(n, 2))
    prob = LinearQuadratic(A, B, [1.0, -0.5, 0.2], 2.0, 1e-2, H=np.eye(3) * 3.0, xr=xr, ur=ur)
    traj = project(prob, zero_curve(prob), np.zeros((n, 2, 3)))
    zeta = search_direction(prob, traj, P0)
    x_opt, u_opt = prob.direct_optimum()
    assert np.allclose(traj.x + zeta.z, x_opt, atol=1e-9)
    assert np.allclose(traj.u + zeta.v, u_opt, atol=1e-9)
    # quadratic model is exact: the predicted decrease matches the true one
    new = Trajectory(prob.s, x_opt, u_opt)
    assert cost(prob, new, P0) - cost(prob, traj, P0) == pytest.approx(zeta.predicted, rel=1e-8)
    # and the slope is the directional derivative
    h = 1e-6
    stepped = Curve(prob.s, traj.x + h * zeta.z, traj.u + h * zeta.v)
    fd = (cost(prob, stepped, P0) - cost(prob, traj, P0)) / h
    assert fd == pytest.approx(zeta.slope, rel=1e-4)


def test_fixed_barrier_solve_converges_in_one_step_on_lq():
    A = np.array([[0.0, 1.0], [-1.0, -0.2]])
    B = np.array([[0.0], [1.0]])
    prob = LinearQuadratic(A, B, [1.0, 0.0], 5.0, 1e-2, H=np.eye(2))
    traj = project(prob, zero_curve(prob), np.zeros((prob.n_nodes, 1, 2)))
    res = solve_fixed_barrier(prob, traj, P0)
    assert res.converged
    assert res.iterations <= 2
    assert res.records[0].gamma == 1.0
    x_opt, _ = prob.direct_optimum()
    assert np.allclose(res.trajectory.x, x_opt, atol=1e-8)


def test_projection_is_idempotent_and_matches_ode_solution():
    A = np.array([[0.0, 1.0], [-2.0, -0.3]])
    B = np.array([[0.0], [1.0]])
    prob = LinearQuadratic(A, B, [0.3, -0.1], 4.0, 1e-2)
    s = prob.s
    curve = Curve(s, np.column_stack((np.sin(s), np.cos(s))), np.cos(3 * s)[:, None])
    gs = design_gain(prob, curve)
    traj = project(prob, curve, gs)
    again = project(prob, traj, gs)
    assert np.allclose(again.x, traj.x, atol=1e-12)
    assert np.allclose(again.u, traj.u, atol=1e-12)
    # with zero gain the projection is the open-loop response to piecewise-constant inputs
    ol = project(prob, curve, np.zeros_like(gs.K))
    x = np.array(prob.x0)
    for k in range(s.size - 1):
        sol = solve_ivp(lambda t, y: A @ y + B @ curve.u[k], (s[k], s[k + 1]), x,
                        rtol=1e-11, atol=1e-12)
        x = sol.y[:, -1]
        assert np.allclose(ol.x[k + 1], x, atol=1e-8)


def test_projection_feedback_rejects_initial_offset():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    prob = LinearQuadratic(A, B, [0.0, 1.0], 6.0, 1e-2)
    K0 = np.zeros((prob.n_nodes, 1, 2))
    base = project(prob, Curve(prob.s, np.zeros((prob.n_nodes, 2)),
                               np.sin(prob.s)[:, None]), K0)
    gs = design_gain(prob, base)
    x0 = prob.x0 + np.array([0.1, 0.0])
    closed = project(prob, base, gs, x0=x0)
    opened = project(prob, base, K0, x0=x0)
    mid = prob.n_nodes // 2
    # closed-loop poles of the unit-weight regulator have real part -sqrt(3)/2
    assert np.linalg.norm(closed.x[mid] - base.x[mid]) < 0.1 * np.exp(-0.8 * 3.0) * 3
    assert np.linalg.norm(opened.x[mid] - base.x[mid]) == pytest.approx(0.1)


def test_projection_reports_divergence_location():
    prob = LinearQuadratic([[1.0]], [[1.0]], [0.0], 2.0, 1e-2, x_floor=-0.5)
    curve = Curve(prob.s, np.zeros((prob.n_nodes, 1)), -np.ones((prob.n_nodes, 1)))
    with pytest.raises(DivergedProjectionError) as exc:
        project(prob, curve, np.zeros((prob.n_nodes, 1, 1)))
    assert exc.value.s == pytest.approx(np.log(1.5), abs=2e-2)


def test_line_search_backtracks_across_infeasible_region():
    # states below the floor make the projection fail: full steps must be cut
    prob = LinearQuadratic([[0.0]], [[1.0]], [1.0], 1.0, 1e-2, xr=np.full((101, 1), -5.0),
                           x_floor=0.2)
    traj = project(prob, zero_curve(prob), np.zeros((prob.n_nodes, 1, 1)))
    zeta = search_direction(prob, traj, P0, gauss_newton=True)
    gs = GainSchedule(np.zeros((prob.n_nodes, 1, 1)), np.zeros((prob.n_nodes, 1, 1)),
                      np.zeros(prob.n_nodes))
    res = line_search(prob, traj, zeta, P0, gs)
    assert 0 < res.gamma < 1
    assert res.cost < cost(prob, traj, P0)
    assert np.min(res.trajectory.x) > 0.2


def test_line_search_rejects_ascent_direction():
    prob = LinearQuadratic([[0.0]], [[1.0]], [1.0], 1.0, 1e-2)
    traj = project(prob, zero_curve(prob), np.zeros((prob.n_nodes, 1, 1)))
    zeta = search_direction(prob, traj, P0)
    up = DescentDirection(-zeta.z, -zeta.v, -zeta.slope, 0.0, False)
    gs = design_gain(prob, traj)
    with pytest.raises(LineSearchError):
        line_search(prob, traj, up, P0, gs)
