import numpy as np
import pytest

from quadmintime.corridor import (
    BoundProfile,
    CorridorSpec,
    FinalBox,
    InputStateBounds,
    StageConstraints,
    box_surface_points,
    cylinder_surface_points,
    eval_circular,
    eval_final_constraints,
    eval_rect,
    eval_stage_constraints,
    load_obstacle_csv,
    map_obstacle_point,
    restrict_bounds,
    sigmoid_bound,
    write_obstacle_csv,
)
from quadmintime.errors import CorridorError, InfeasibleCorridorError
from quadmintime.framepath import CurvatureProfile, build_planar_path

E1, E2, E3 = np.eye(3)


@pytest.fixture(scope="module")
def line():
    return build_planar_path(CurvatureProfile.constant(0.0), E3, np.zeros(3), E1, 6.0, 1e-3)


@pytest.fixture(scope="module")
def room_path():
    prof = CurvatureProfile.tanh_bump(0.2, 5.0, 5 * (1 + np.pi / 2))
    return build_planar_path(prof, E3, np.zeros(3), E1, 17.854, 1e-3)


def rect(s, half):
    hi = BoundProfile.constant(s, half)
    return CorridorSpec.rectangular(-hi, hi, -hi, hi)


def bounds_for(n, s):
    ang = BoundProfile.constant(s, 1.0)
    return InputStateBounds(np.radians(15), 1.0, 1.0, 0.1779, 0.3411, ang, ang, ang)


def test_scalar_constraints():
    assert eval_circular(0, 0, 0.3) == -1
    assert eval_circular(0.3 * np.cos(1), 0.3 * np.sin(1), 0.3) == pytest.approx(0, abs=1e-15)
    assert eval_circular(0.4, 0, 0.3) > 0
    assert eval_rect(0.5, -1, 2) == -1
    assert eval_rect(2.0, -1, 2) == 0
    assert eval_rect(2.5, -1, 2) > 0
    # scenario-2 radius from the hand-held clearance minus vehicle size and tracking error
    assert 0.33 - 0.04 - 0.01 == pytest.approx(0.28)


def test_stage_constraint_vector():
    s = np.linspace(0, 1, 11)
    b = bounds_for(11, s)
    mg = 0.0325 * 9.81
    mid = np.array([0, 0, 0, mg])
    c = eval_stage_constraints(np.zeros(8), mid, b, rect(s, 0.5), 0.3)
    assert np.all((c >= -1) & (c <= 0))
    expect = ((2 * mg - (b.F_max + b.F_min)) / (b.F_max - b.F_min)) ** 2 - 1
    assert c[3] == pytest.approx(expect)
    c = eval_stage_constraints(np.zeros(8), [b.p_max, 0, 0, mg], b, rect(s, 0.5), 0.3)
    assert c[0] == pytest.approx(0)
    c = eval_stage_constraints(np.zeros(8), [np.radians(7.5), 0, 0, mg], b, rect(s, 0.5), 0.3)
    assert c[0] == pytest.approx(-0.75)


def test_grid_constraints_match_pointwise_and_derivatives():
    rng = np.random.default_rng(0)
    n = 7
    s = np.linspace(0, 1, n)
    b = bounds_for(n, s)
    for cor in (rect(s, 0.5), CorridorSpec.circular(BoundProfile.constant(s, 0.3))):
        sc = StageConstraints(b, cor, n)
        X = rng.uniform(-0.2, 0.2, (n, 8))
        U = np.column_stack((rng.uniform(-0.2, 0.2, (n, 3)), rng.uniform(0.2, 0.3, n)))
        C = sc.values(X, U)
        for i in range(n):
            assert np.allclose(C[i], eval_stage_constraints(X[i], U[i], b, cor, s[i]))
        # barrier phi(x) = -log(x) at x = -c: phi' = 1/c, phi'' = 1/c^2
        def terms(Z):
            C = sc.values(Z[:, :8], Z[:, 8:])
            return sc.barrier_terms(Z[:, :8], Z[:, 8:], 1.0 / C, 1.0 / C ** 2)

        def phi(Z):
            return np.sum(-np.log(-sc.values(Z[:, :8], Z[:, 8:])), axis=1)

        Z = np.hstack((X, U))
        g, H = terms(Z)
        h = 1e-6
        for j in range(12):
            E = np.zeros_like(Z)
            E[:, j] = h
            fd = (phi(Z + E) - phi(Z - E)) / (2 * h)
            assert np.allclose(g[:, j], fd, rtol=1e-5, atol=1e-6)
            fd2 = (terms(Z + E)[0] - terms(Z - E)[0]) / (2 * h)
            assert np.allclose(H[:, :, j], fd2, rtol=1e-5, atol=1e-5)


def test_single_constraint_log_barrier_hessian_symbolic():
    # -log(-c) with c = (w/r)^2 - 1 in one variable: d2 = 2/r^2/(-c) + (2w/r^2)^2/c^2
    n, r, w = 3, 0.3, 0.12
    s = np.linspace(0, 1, n)
    sc = StageConstraints(bounds_for(n, s), CorridorSpec.circular(BoundProfile.constant(s, r)), n)
    X = np.zeros((n, 8))
    X[:, 0] = w
    U = np.tile([0, 0, 0, 0.26], (n, 1))
    C = sc.values(X, U)
    _, H = sc.barrier_terms(X, U, 1.0 / C, 1.0 / C ** 2)
    c = w * w / r ** 2 - 1
    expect = 2 / r ** 2 / (-c) + (2 * w / r ** 2) ** 2 / c ** 2
    assert H[0, 0, 0] == pytest.approx(expect, rel=1e-12)


def test_final_constraints():
    box = FinalBox.around(np.arange(8.0), 0.1)
    assert np.allclose(eval_final_constraints(box.center, box), -1)
    assert np.allclose(eval_final_constraints(box.hi, box), 0)
    with pytest.raises(CorridorError):
        FinalBox(np.zeros(8), np.zeros(8))


def test_sigmoid_bound():
    s = np.linspace(0, 18, 18001)
    b = sigmoid_bound(s, 7.5, 0.1, 2.0, 0.25, s_back=10.5)
    assert b(0.0) == pytest.approx(2.0, abs=1e-6)
    assert b(9.0) == pytest.approx(0.25, abs=1e-5)
    assert b(7.5) == pytest.approx(1.125, abs=1e-6)
    assert np.all((b.values >= 0.25) & (b.values <= 2.0))
    with pytest.raises(CorridorError):
        sigmoid_bound(s, 1, 0.1, 0.2, 0.3)


def test_corridor_validation(room_path):
    s = room_path.s
    with pytest.raises(CorridorError):
        # 0.95 / max k = 4.75 m
        rect(s, 5.0).validate(room_path)
    rect(s, 2.0).validate(room_path)
    with pytest.raises(InfeasibleCorridorError):
        CorridorSpec.rectangular(BoundProfile.constant(s, 0.1), BoundProfile.constant(s, 0.1),
                                 -BoundProfile.constant(s, 1), BoundProfile.constant(s, 1)
                                 ).validate()


def test_map_obstacle_point(line, room_path):
    assert map_obstacle_point(line, [3.0, 0.0, 0.0]) == pytest.approx((3.0, 0, 0))
    assert map_obstacle_point(line, [3.0, -0.4, 0.1]) == pytest.approx((3.0, -0.4, 0.1))
    # box corner near the scenario-1 path against a dense grid search
    corner = np.array([1.8, -0.42, 0.4])
    s_obs, w1, w2 = map_obstacle_point(room_path, corner)
    fine = np.linspace(0, 4, 40001)
    d = [np.linalg.norm(room_path.position_at(t) - corner) for t in fine]
    j = int(np.argmin(d))
    assert s_obs == pytest.approx(fine[j], abs=1e-4)
    fr_n = room_path.frame_at(fine[j]).n
    assert w1 == pytest.approx(fr_n @ (corner - room_path.position_at(fine[j])), abs=1e-6)
    assert w2 == pytest.approx(0.4, abs=1e-9)


def test_restrict_bounds_single_point(line):
    s = line.s
    cor = rect(s, 1.0)
    assert restrict_bounds(cor, np.empty((0, 3)), line, "w1_min") is cor
    out = restrict_bounds(cor, [[2.5, -0.3, 0.0]], line, "w1_min", window=1)
    i = 2500
    assert out.w1_min.values[i] == pytest.approx(-0.3)
    changed = np.flatnonzero(out.w1_min.values != cor.w1_min.values)
    assert changed.tolist() == [i]
    assert np.array_equal(out.w1_max.values, cor.w1_max.values)
    # upper side of w2 uses the minimum
    out = restrict_bounds(cor, [[2.5, 0.0, 0.2]], line, "w2_max", window=1)
    assert out.w2_max.values[i] == pytest.approx(0.2)
    with pytest.raises(InfeasibleCorridorError, match=r"2\.5"):
        restrict_bounds(cor, [[2.5, 1.5, 0.0]], line, "w1_min", window=1)


def test_restrict_bounds_box_plateau_matches_per_point_oracle(room_path):
    s = room_path.s
    cor = rect(s, 2.0)
    pts = box_surface_points([1.8, -1.2, -0.4], [3.2, -0.42, 0.4], spacing=0.05)
    out = restrict_bounds(cor, pts, room_path, "w1_min", window=1)
    # per-point oracle: map each point on its own and take the pointwise max
    env = np.full(s.size, -np.inf)
    for p in pts:
        s_obs, w1, _ = map_obstacle_point(room_path, p)
        i = int(round(s_obs / room_path.ds))
        env[i] = max(env[i], w1)
    expect = np.maximum(cor.w1_min.values, env)
    assert np.allclose(out.w1_min.values, expect, atol=1e-9)
    touched = np.flatnonzero(out.w1_min.values > -2.0)
    assert s[touched[0]] == pytest.approx(1.8, abs=2e-3)
    assert s[touched[-1]] == pytest.approx(3.2, abs=2e-3)
    # smoothing over more than the sample spacing never loosens the bound and
    # leaves a plateau set by the face at y = -0.42
    smooth = restrict_bounds(cor, pts, room_path, "w1_min", window=61)
    assert np.all(smooth.w1_min.values >= out.w1_min.values)
    assert np.allclose(smooth.w1_min.values[touched[0]:touched[-1] + 1], -0.42, atol=5e-3)


def test_obstacle_csv_round_trip(tmp_path):
    pts = cylinder_surface_points([1, 2, 3], [0, 0, 1], 0.3, 0.5, spacing=0.05)
    assert np.allclose(np.hypot(pts[:, 0] - 1, pts[:, 1] - 2).max(), 0.3)
    f = tmp_path / "c.csv"
    write_obstacle_csv(f, pts)
    assert np.array_equal(load_obstacle_csv(f), pts)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(CorridorError):
        load_obstacle_csv(tmp_path / "bad.csv")
