import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from quadmintime.dynamics import (
    VehicleParams,
    costate_hessian,
    dilation,
    euler_rate_matrix,
    linearize_transverse,
    rotation_matrix,
    time_domain_field,
    transverse_field,
)
from quadmintime.errors import SingularityError, TransverseDomainError
from quadmintime.framepath import FrenetFrame

VP = VehicleParams(0.0325)
STRAIGHT = FrenetFrame(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0]),
                       0.0, 0.0)


def random_frame(rng):
    R = Rotation.random(random_state=rng).as_matrix()
    return FrenetFrame(R[:, 0], R[:, 1], R[:, 2], rng.uniform(-1, 1), rng.uniform(-0.5, 0.5))


def random_point(rng, fr):
    xw = np.empty(8)
    xw[:2] = rng.uniform(-0.3, 0.3, 2)
    v = rng.normal(size=3)
    xw[2:5] = v - (fr.t @ v) * fr.t + rng.uniform(0.5, 3.0) * fr.t
    xw[5:8] = rng.uniform([-1.2, -1.2, -np.pi], [1.2, 1.2, np.pi])
    u = np.concatenate((rng.uniform(-2, 2, 3), [rng.uniform(0.1, 0.6)]))
    return xw, u


def test_rotation_matrix_against_elementary_rotations():
    assert np.allclose(rotation_matrix([0, 0, 0]), np.eye(3))
    assert np.allclose(rotation_matrix([0, 0, np.pi / 2]), [[0, -1, 0], [1, 0, 0], [0, 0, 1]])
    rng = np.random.default_rng(1)
    for _ in range(20):
        phi, th, psi = rng.uniform(-3, 3, 3)
        ref = Rotation.from_euler("ZYX", [psi, th, phi]).as_matrix()
        assert np.allclose(rotation_matrix([phi, th, psi]), ref, atol=1e-14)


def test_euler_rate_matrix():
    assert np.allclose(euler_rate_matrix([0, 0, 0]), np.eye(3))
    rng = np.random.default_rng(2)
    Phi = np.array([0.4, -0.9, 1.3])
    om = rng.normal(size=3)
    dt = 1e-7
    # body rates: dR/dt = R [om]x
    R = rotation_matrix(Phi)
    R2 = R @ Rotation.from_rotvec(om * dt).as_matrix()
    Phi2 = Rotation.from_matrix(R2).as_euler("ZYX")[::-1]
    assert np.allclose((Phi2 - Phi) / dt, euler_rate_matrix(Phi) @ om, atol=1e-5)
    with pytest.raises(SingularityError):
        euler_rate_matrix([0, np.pi / 2 - 0.01, 0])


def test_time_domain_field_hover_and_free_fall():
    x = np.zeros(9)
    f = time_domain_field(x, [0, 0, 0, VP.hover_thrust], VP)
    assert np.allclose(f, 0)
    f = time_domain_field(x, [0, 0, 0, 0.0], VP)
    assert np.allclose(f[3:6], [0, 0, 9.81])
    assert VP.hover_thrust == pytest.approx(0.3188, abs=1e-4)
    assert 0.1779 < VP.hover_thrust < 0.3411


def test_steady_cruise_is_equilibrium():
    xw = np.array([0, 0, 1.7, 0, 0, 0, 0, 0.0])
    f = transverse_field(xw, [0, 0, 0, VP.hover_thrust], STRAIGHT, VP)
    assert np.allclose(f, 0)
    A, B = linearize_transverse(xw, [0, 0, 0, VP.hover_thrust], STRAIGHT, VP)
    assert np.allclose(A[:2, :2], 0)
    assert np.allclose(A[5:, :5], 0)


def test_dilation():
    xw = np.array([0.3, -0.1, 2.0, 0.4, -0.2, 0, 0, 0])
    assert dilation(xw, STRAIGHT) == pytest.approx(0.5)
    with pytest.raises(TransverseDomainError):
        dilation(np.array([0, 0, -1.0, 0, 0, 0, 0, 0]), STRAIGHT)
    bent = FrenetFrame(STRAIGHT.t, STRAIGHT.n, STRAIGHT.b, 2.0, 0.0)
    with pytest.raises(TransverseDomainError):
        transverse_field(np.array([0.6, 0, 1, 0, 0, 0, 0, 0]), np.zeros(4), bent, VP)


def test_jacobians_match_central_differences():
    rng = np.random.default_rng(4)
    h = 1e-6
    for _ in range(50):
        fr = random_frame(rng)
        xw, u = random_point(rng, fr)
        A, B = linearize_transverse(xw, u, fr, VP)
        z = np.concatenate((xw, u))
        J = np.empty((8, 12))
        for j in range(12):
            e = np.zeros(12)
            e[j] = h
            fp = transverse_field((z + e)[:8], (z + e)[8:], fr, VP)
            fm = transverse_field((z - e)[:8], (z - e)[8:], fr, VP)
            J[:, j] = (fp - fm) / (2 * h)
        scale = np.maximum(np.abs(J), 1.0)
        assert np.max(np.abs(np.hstack((A, B)) - J) / scale) < 1e-5


def test_dilation_row_symbolic():
    # w1' = eta n'v with eta = (1 - k w1)/(t'v): d w1'/dv = eta n - eta n'v / (t'v) t
    rng = np.random.default_rng(5)
    fr = random_frame(rng)
    xw, u = random_point(rng, fr)
    A, _ = linearize_transverse(xw, u, fr, VP)
    v = xw[2:5]
    eta = (1 - fr.k * xw[0]) / (fr.t @ v)
    expect = eta * fr.n - eta * (fr.n @ v) / (fr.t @ v) * fr.t
    assert np.allclose(A[0, 2:5], expect, rtol=1e-12)


def test_costate_hessian_matches_jacobian_differences():
    rng = np.random.default_rng(6)
    h = 1e-6
    for _ in range(20):
        fr = random_frame(rng)
        xw, u = random_point(rng, fr)
        lam = rng.normal(size=8)
        H = costate_hessian(xw, u, fr, VP, lam)
        z = np.concatenate((xw, u))
        num = np.empty((12, 12))
        for j in range(12):
            e = np.zeros(12)
            e[j] = h
            Ap, Bp = linearize_transverse((z + e)[:8], (z + e)[8:], fr, VP)
            Am, Bm = linearize_transverse((z - e)[:8], (z - e)[8:], fr, VP)
            num[:, j] = lam @ (np.hstack((Ap, Bp)) - np.hstack((Am, Bm))) / (2 * h)
        assert np.allclose(H, H.T)
        scale = np.maximum(np.abs(num), 1.0)
        assert np.max(np.abs(H - num) / scale) < 1e-5
