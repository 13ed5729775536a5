"""Vectored-thrust quadrotor model in time and in transverse coordinates.

Layouts used throughout the package::

    time state       x  = [p1 p2 p3  v1 v2 v3  phi theta psi]
    transverse state xw = [w1 w2  v1 v2 v3  phi theta psi]
    input            u  = [p q r  F]

``e3 = [0, 0, 1]`` points along gravity.  Euler angles compose yaw-pitch-roll
about the current axes: ``R = Rz(psi) Ry(theta) Rx(phi)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import SingularityError, TransverseDomainError
from .framepath import FrenetFrame, project_point, transverse_coords

NX = 8
NU = 4
PITCH_MARGIN = 0.05

IW1, IW2 = 0, 1
IV = slice(2, 5)
IPHI = slice(5, 8)
IOMEGA = slice(0, 3)
IF = 3

STATE_NAMES = ("w1", "w2", "v1", "v2", "v3", "phi", "theta", "psi")
INPUT_NAMES = ("p", "q", "r", "F")

E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class VehicleParams:
    m: float
    g: float = 9.81

    def __post_init__(self):
        if not (self.m > 0):
            raise ValueError("vehicle mass must be positive")
        if not (self.g > 0):
            raise ValueError("gravity constant must be positive")

    @property
    def hover_thrust(self) -> float:
        return self.m * self.g

    def as_array(self, pitch_margin: float = PITCH_MARGIN) -> np.ndarray:
        return np.array([self.m, self.g, pitch_margin])


# --------------------------------------------------------------------------
# attitude kinematics
# --------------------------------------------------------------------------

def rotation_matrix(Phi) -> np.ndarray:
    phi, th, psi = (float(a) for a in Phi)
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(th), np.sin(th)
    cp, sp = np.cos(psi), np.sin(psi)
    return np.array([
        [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
        [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
        [-st, ct * sf, ct * cf],
    ])


def _check_pitch(theta, margin):
    if abs(theta) >= np.pi / 2 - margin:
        raise SingularityError(
            f"pitch {theta:.4f} rad within {margin} rad of the Euler singularity")


def euler_rate_matrix(Phi, margin: float = PITCH_MARGIN) -> np.ndarray:
    """``J(Phi)`` with ``dPhi/dt = J(Phi) omega`` for body rates ``omega``."""
    phi, th = float(Phi[0]), float(Phi[1])
    _check_pitch(th, margin)
    cf, sf = np.cos(phi), np.sin(phi)
    ct, tt = np.cos(th), np.tan(th)
    return np.array([
        [1.0, sf * tt, cf * tt],
        [0.0, cf, -sf],
        [0.0, sf / ct, cf / ct],
    ])


def time_domain_field(x, u, params: VehicleParams, margin: float = PITCH_MARGIN):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    Phi = x[6:9]
    J = euler_rate_matrix(Phi, margin)
    R = rotation_matrix(Phi)
    dv = params.g * E3 - u[3] / params.m * R[:, 2]
    return np.concatenate((x[3:6], dv, J @ u[:3]))


# --------------------------------------------------------------------------
# compiled kernels
# --------------------------------------------------------------------------
# prm = [m, g, pitch_margin]; frame row = [t(3), n(3), b(3), k, tau]

@numba.njit(cache=True)
def _thrust_axis(phi, th, psi):
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(th), np.sin(th)
    cp, sp = np.cos(psi), np.sin(psi)
    r3 = np.empty(3)
    r3[0] = cp * st * cf + sp * sf
    r3[1] = sp * st * cf - cp * sf
    r3[2] = ct * cf
    # d r3 / d(phi, theta, psi), column per angle
    d = np.empty((3, 3))
    d[0, 0] = -cp * st * sf + sp * cf
    d[1, 0] = -sp * st * sf - cp * cf
    d[2, 0] = -ct * sf
    d[0, 1] = cp * ct * cf
    d[1, 1] = sp * ct * cf
    d[2, 1] = -st * cf
    d[0, 2] = -sp * st * cf + cp * sf
    d[1, 2] = cp * st * cf + sp * sf
    d[2, 2] = 0.0
    return r3, d


@numba.njit(cache=True)
def _thrust_axis_hess(phi, th, psi):
    """Second derivatives of r3, ``H[i, a, b] = d2 r3_i / dPhi_a dPhi_b``."""
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(th), np.sin(th)
    cp, sp = np.cos(psi), np.sin(psi)
    A = cp * st * cf + sp * sf
    B = sp * st * cf - cp * sf
    C = ct * cf
    H = np.zeros((3, 3, 3))
    # phi phi
    H[0, 0, 0] = -A
    H[1, 0, 0] = -B
    H[2, 0, 0] = -C
    # theta theta
    H[0, 1, 1] = -cp * st * cf
    H[1, 1, 1] = -sp * st * cf
    H[2, 1, 1] = -ct * cf
    # psi psi
    H[0, 2, 2] = -A
    H[1, 2, 2] = -B
    # phi theta
    H[0, 0, 1] = -cp * ct * sf
    H[1, 0, 1] = -sp * ct * sf
    H[2, 0, 1] = st * sf
    # phi psi
    H[0, 0, 2] = sp * st * sf + cp * cf
    H[1, 0, 2] = -cp * st * sf + sp * cf
    # theta psi
    H[0, 1, 2] = -sp * ct * cf
    H[1, 1, 2] = cp * ct * cf
    for i in range(3):
        H[i, 1, 0] = H[i, 0, 1]
        H[i, 2, 0] = H[i, 0, 2]
        H[i, 2, 1] = H[i, 1, 2]
    return H


@numba.njit(cache=True)
def _euler_rates(phi, th, om):
    """``J om``, its Phi-Jacobian, ``J`` and ``dJ/dphi``, ``dJ/dtheta``."""
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(th), np.sin(th)
    tt = st / ct
    sec2 = 1.0 / (ct * ct)
    p, q, r = om[0], om[1], om[2]
    a1 = sf * q + cf * r
    a2 = cf * q - sf * r
    rates = np.empty(3)
    rates[0] = p + tt * a1
    rates[1] = a2
    rates[2] = a1 / ct
    d = np.zeros((3, 3))
    d[0, 0] = tt * a2
    d[1, 0] = -a1
    d[2, 0] = a2 / ct
    d[0, 1] = a1 * sec2
    d[2, 1] = a1 * st * sec2
    J = np.empty((3, 3))
    J[0, 0] = 1.0
    J[0, 1] = sf * tt
    J[0, 2] = cf * tt
    J[1, 0] = 0.0
    J[1, 1] = cf
    J[1, 2] = -sf
    J[2, 0] = 0.0
    J[2, 1] = sf / ct
    J[2, 2] = cf / ct
    return rates, d, J


@numba.njit(cache=True)
def _euler_rates_hess(phi, th, om):
    """Second Phi-derivatives of ``J om`` and the Phi-derivatives of ``J``."""
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(th), np.sin(th)
    tt = st / ct
    sec2 = 1.0 / (ct * ct)
    q, r = om[1], om[2]
    a1 = sf * q + cf * r
    a2 = cf * q - sf * r
    H = np.zeros((3, 3, 3))
    H[0, 0, 0] = -tt * a1
    H[1, 0, 0] = -a2
    H[2, 0, 0] = -a1 / ct
    H[0, 0, 1] = a2 * sec2
    H[2, 0, 1] = a2 * st * sec2
    H[0, 1, 0] = H[0, 0, 1]
    H[2, 1, 0] = H[2, 0, 1]
    H[0, 1, 1] = 2.0 * a1 * sec2 * tt
    H[2, 1, 1] = a1 * (ct * ct + 2.0 * st * st) / (ct * ct * ct)
    dJ = np.zeros((3, 3, 3))  # dJ[a] = dJ/dPhi_a
    dJ[0, 0, 1] = cf * tt
    dJ[0, 0, 2] = -sf * tt
    dJ[0, 1, 1] = -sf
    dJ[0, 1, 2] = -cf
    dJ[0, 2, 1] = cf / ct
    dJ[0, 2, 2] = -sf / ct
    dJ[1, 0, 1] = sf * sec2
    dJ[1, 0, 2] = cf * sec2
    dJ[1, 2, 1] = sf * st * sec2
    dJ[1, 2, 2] = cf * st * sec2
    return H, dJ


@numba.njit(cache=True)
def check_transverse_kernel(x, fr, prm):
    """0 if the state is admissible, else 1 (tangential speed), 2 (tube), 3 (pitch)."""
    tv = fr[0] * x[2] + fr[1] * x[3] + fr[2] * x[4]
    if not (tv > 0.0):
        return 1
    if not (1.0 - fr[9] * x[0] > 0.0):
        return 2
    if not (abs(x[6]) < np.pi / 2 - prm[2]):
        return 3
    for i in range(x.shape[0]):
        if not np.isfinite(x[i]):
            return 4
    return 0


@numba.njit(cache=True)
def transverse_field_kernel(x, u, fr, prm):
    m, g = prm[0], prm[1]
    k, tau = fr[9], fr[10]
    a = 1.0 - k * x[0]
    tv = fr[0] * x[2] + fr[1] * x[3] + fr[2] * x[4]
    nv = fr[3] * x[2] + fr[4] * x[3] + fr[5] * x[4]
    bv = fr[6] * x[2] + fr[7] * x[3] + fr[8] * x[4]
    eta = a / tv
    r3, _ = _thrust_axis(x[5], x[6], x[7])
    rates, _, _ = _euler_rates(x[5], x[6], u[:3])
    dx = np.empty(8)
    dx[0] = nv * eta + tau * x[1]
    dx[1] = bv * eta - tau * x[0]
    F = u[3]
    dx[2] = eta * (-F / m * r3[0])
    dx[3] = eta * (-F / m * r3[1])
    dx[4] = eta * (g - F / m * r3[2])
    dx[5] = eta * rates[0]
    dx[6] = eta * rates[1]
    dx[7] = eta * rates[2]
    return dx


@numba.njit(cache=True)
def transverse_jac_kernel(x, u, fr, prm):
    m, g = prm[0], prm[1]
    k, tau = fr[9], fr[10]
    t = fr[0:3]
    n = fr[3:6]
    b = fr[6:9]
    a = 1.0 - k * x[0]
    v = x[2:5]
    tv = t[0] * v[0] + t[1] * v[1] + t[2] * v[2]
    nv = n[0] * v[0] + n[1] * v[1] + n[2] * v[2]
    bv = b[0] * v[0] + b[1] * v[1] + b[2] * v[2]
    eta = a / tv
    deta_w1 = -k / tv
    deta_v = -a / (tv * tv) * t
    F = u[3]
    r3, dr3 = _thrust_axis(x[5], x[6], x[7])
    rates, drates, J = _euler_rates(x[5], x[6], u[:3])
    acc = np.empty(3)
    acc[0] = -F / m * r3[0]
    acc[1] = -F / m * r3[1]
    acc[2] = g - F / m * r3[2]
    A = np.zeros((8, 8))
    B = np.zeros((8, 4))
    A[0, 0] = nv * deta_w1
    A[0, 1] = tau
    A[1, 0] = bv * deta_w1 - tau
    for j in range(3):
        A[0, 2 + j] = eta * n[j] + nv * deta_v[j]
        A[1, 2 + j] = eta * b[j] + bv * deta_v[j]
    for i in range(3):
        A[2 + i, 0] = acc[i] * deta_w1
        A[5 + i, 0] = rates[i] * deta_w1
        for j in range(3):
            A[2 + i, 2 + j] = acc[i] * deta_v[j]
            A[5 + i, 2 + j] = rates[i] * deta_v[j]
            A[2 + i, 5 + j] = -eta * F / m * dr3[i, j]
            A[5 + i, 5 + j] = eta * drates[i, j]
            B[5 + i, j] = eta * J[i, j]
        B[2 + i, 3] = -eta * r3[i] / m
    return A, B


@numba.njit(cache=True)
def transverse_lam_hess_kernel(x, u, fr, prm, lam):
    """Hessian over ``z = [x, u]`` of ``lam . f(x, u)``."""
    m, g = prm[0], prm[1]
    k = fr[9]
    t = fr[0:3]
    n = fr[3:6]
    b = fr[6:9]
    a = 1.0 - k * x[0]
    v = x[2:5]
    tv = t[0] * v[0] + t[1] * v[1] + t[2] * v[2]
    eta = a / tv
    F = u[3]
    om = u[:3]
    lw1, lw2 = lam[0], lam[1]
    lv = lam[2:5]
    lp = lam[5:8]
    r3, dr3 = _thrust_axis(x[5], x[6], x[7])
    H3 = _thrust_axis_hess(x[5], x[6], x[7])
    rates, drates, J = _euler_rates(x[5], x[6], om)
    Hr, dJ = _euler_rates_hess(x[5], x[6], om)
    acc = np.empty(3)
    acc[0] = -F / m * r3[0]
    acc[1] = -F / m * r3[1]
    acc[2] = g - F / m * r3[2]
    # G = lam . (f / eta) without the torsion terms
    G = lw1 * (n[0] * v[0] + n[1] * v[1] + n[2] * v[2]) \
        + lw2 * (b[0] * v[0] + b[1] * v[1] + b[2] * v[2])
    for i in range(3):
        G += lv[i] * acc[i] + lp[i] * rates[i]
    dG = np.zeros(12)
    for j in range(3):
        dG[2 + j] = lw1 * n[j] + lw2 * b[j]
        s_phi = 0.0
        s_om = 0.0
        for i in range(3):
            s_phi += -F / m * lv[i] * dr3[i, j] + lp[i] * drates[i, j]
            s_om += lp[i] * J[i, j]
        dG[5 + j] = s_phi
        dG[8 + j] = s_om
    dG[11] = -(lv[0] * r3[0] + lv[1] * r3[1] + lv[2] * r3[2]) / m
    HG = np.zeros((12, 12))
    for aa in range(3):
        for bb in range(3):
            s = 0.0
            for i in range(3):
                s += -F / m * lv[i] * H3[i, aa, bb] + lp[i] * Hr[i, aa, bb]
            HG[5 + aa, 5 + bb] = s
            sj = 0.0
            for i in range(3):
                sj += lp[i] * dJ[aa, i, bb]
            HG[5 + aa, 8 + bb] = sj
            HG[8 + bb, 5 + aa] = sj
        sf = 0.0
        for i in range(3):
            sf += -lv[i] * dr3[i, aa] / m
        HG[5 + aa, 11] = sf
        HG[11, 5 + aa] = sf
    de = np.zeros(12)
    de[0] = -k / tv
    for j in range(3):
        de[2 + j] = -a / (tv * tv) * t[j]
    He = np.zeros((12, 12))
    for j in range(3):
        He[0, 2 + j] = k / (tv * tv) * t[j]
        He[2 + j, 0] = He[0, 2 + j]
        for i in range(3):
            He[2 + i, 2 + j] = 2.0 * a / (tv * tv * tv) * t[i] * t[j]
    H = eta * HG + G * He
    for i in range(12):
        for j in range(12):
            H[i, j] += de[i] * dG[j] + dG[i] * de[j]
    return H


# --------------------------------------------------------------------------
# checked single-point API
# --------------------------------------------------------------------------

def _frame_row(frame):
    if isinstance(frame, FrenetFrame):
        return frame.as_row()
    return np.asarray(frame, dtype=float)


def _check(xw, fr, margin):
    code = check_transverse_kernel(xw, fr, np.array([1.0, 1.0, margin]))
    if code == 1:
        raise TransverseDomainError("tangential velocity t'v must be positive")
    if code == 2:
        raise TransverseDomainError("1 - k w1 must be positive")
    if code == 3:
        _check_pitch(xw[6], margin)


def dilation(xw, frame) -> float:
    """``dt/ds = (1 - k w1) / (t . v)``."""
    fr = _frame_row(frame)
    xw = np.asarray(xw, dtype=float)
    tv = fr[0:3] @ xw[2:5]
    if not tv > 0:
        raise TransverseDomainError("tangential velocity t'v must be positive")
    a = 1.0 - fr[9] * xw[0]
    if not a > 0:
        raise TransverseDomainError("1 - k w1 must be positive")
    return a / tv


def transverse_field(xw, u, frame, params: VehicleParams, margin: float = PITCH_MARGIN):
    """Arc-length derivative of the transverse state."""
    xw = np.asarray(xw, dtype=float)
    u = np.asarray(u, dtype=float)
    fr = _frame_row(frame)
    _check(xw, fr, margin)
    return transverse_field_kernel(xw, u, fr, params.as_array(margin))


def linearize_transverse(xw, u, frame, params: VehicleParams, margin: float = PITCH_MARGIN):
    """Analytic ``(A, B)`` Jacobians of :func:`transverse_field`."""
    xw = np.asarray(xw, dtype=float)
    u = np.asarray(u, dtype=float)
    fr = _frame_row(frame)
    _check(xw, fr, margin)
    return transverse_jac_kernel(xw, u, fr, params.as_array(margin))


def costate_hessian(xw, u, frame, params: VehicleParams, lam):
    """Hessian of ``lam . f`` over ``[xw, u]`` (second-order term of the Newton model)."""
    return transverse_lam_hess_kernel(np.asarray(xw, float), np.asarray(u, float),
                                      _frame_row(frame), params.as_array(),
                                      np.asarray(lam, float))


def time_to_transverse(path, x, s_hint=None):
    """Map a time-domain state to ``(s, xw)``."""
    x = np.asarray(x, dtype=float)
    s = project_point(path, x[:3], s_hint=s_hint)
    w1, w2 = transverse_coords(path, s, x[:3])
    return s, np.concatenate(([w1, w2], x[3:9]))
