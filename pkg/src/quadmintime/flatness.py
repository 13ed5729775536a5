"""Strictly feasible initial trajectory from the flat outputs (position, yaw)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .dynamics import PITCH_MARGIN, VehicleParams, euler_rate_matrix
from .errors import FlatnessError, InfeasibleInitializationError, SingularityError
from .pronto import Curve, Trajectory, design_gain, margins, project, trajectory_defect

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class InitSpec:
    """Cruise speed (scalar or one value per node) and yaw profile, rad."""

    speed: ArrayLike = 0.5
    yaw: ArrayLike = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.speed) <= 0) or not np.all(np.isfinite(self.speed)):
            raise ValueError("initialization speed must be positive everywhere")
        if not np.all(np.isfinite(self.yaw)):
            raise ValueError("yaw profile must be finite")

    def on_grid(self, n: int):
        speed = np.broadcast_to(np.asarray(self.speed, dtype=float), (n,)).copy()
        yaw = np.broadcast_to(np.asarray(self.yaw, dtype=float), (n,)).copy()
        return speed, yaw


def _rz(psi):
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def flat_outputs_to_state_input(pos, vel, acc, jerk, yaw: float, yaw_rate: float,
                                params: VehicleParams, margin: float = PITCH_MARGIN):
    """Time-domain state ``[p, v, Phi]`` and input ``[omega, F]`` from flat outputs.

    The thrust axis ``R e3`` is aligned with ``g e3 - a`` (``e3`` points down);
    body rates follow from differentiating the attitude with the jerk and
    yaw rate.
    """
    pos, vel, acc, jerk = (np.asarray(a, dtype=float) for a in (pos, vel, acc, jerk))
    f = params.g * np.array([0.0, 0.0, 1.0]) - acc
    nf = np.linalg.norm(f)
    if nf < 1e-9:
        raise FlatnessError("free-fall acceleration: thrust direction undefined")
    zb = f / nf
    zb_dot = -(jerk - (zb @ jerk) * zb) / nf
    Rt = _rz(yaw).T
    zp = Rt @ zb
    # d/dt Rz(psi)^T = -psi' S Rz^T with S the generator about e3
    S = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    zp_dot = Rt @ zb_dot - yaw_rate * (S @ zp)
    cphi = np.hypot(zp[0], zp[2])
    if zp[2] <= 0:
        raise SingularityError("thrust axis points upward: pitch beyond +-90 deg")
    phi = np.arcsin(np.clip(-zp[1], -1.0, 1.0))
    th = np.arctan2(zp[0], zp[2])
    phi_dot = -zp_dot[1] / cphi
    th_dot = (zp[2] * zp_dot[0] - zp[0] * zp_dot[2]) / (zp[0] ** 2 + zp[2] ** 2)
    Phi = np.array([phi, th, yaw])
    J = euler_rate_matrix(Phi, margin)
    omega = np.linalg.solve(J, np.array([phi_dot, th_dot, yaw_rate]))
    x = np.concatenate((pos, vel, Phi))
    u = np.concatenate((omega, [params.m * nf]))
    return x, u


def flat_curve(path, vehicle: VehicleParams, spec: InitSpec,
               margin: float = PITCH_MARGIN) -> Curve:
    """Transverse state-input curve following the frame path at the given speed.

    Time derivatives of the flat outputs come from central differences on the
    s-grid (``d/dt = speed d/ds``); the O(ds^2) error is removed by the
    subsequent projection.
    """
    n = path.n_nodes
    speed, yaw = spec.on_grid(n)
    ds = path.ds
    vel = speed[:, None] * path.tangents

    def ddt(a):
        return speed.reshape((-1,) + (1,) * (a.ndim - 1)) * np.gradient(a, ds, axis=0,
                                                                       edge_order=2)

    acc = ddt(vel)
    jerk = ddt(acc)
    yaw_rate = ddt(yaw)
    X = np.zeros((n, 8))
    U = np.zeros((n, 4))
    for i in range(n):
        x9, u = flat_outputs_to_state_input(path.points[i], vel[i], acc[i], jerk[i], yaw[i],
                                            yaw_rate[i], vehicle, margin)
        X[i, 2:] = x9[3:]
        U[i] = u
    return Curve(path.s, X, U)


def _check_interior(problem, traj: Trajectory) -> float:
    ms, mf = margins(problem, traj)
    if ms <= 0.0:
        c = problem.constraint_values(traj.x, traj.u)
        k, j = np.unravel_index(np.argmax(c), c.shape)
        raise InfeasibleInitializationError(
            f"initial trajectory violates constraint {problem.constraint_names[j]} "
            f"at s = {problem.s[k]:.4f} (c = {c[k, j]:.4g})")
    if mf <= 0.0:
        cf = problem.final_constraint_values(traj.x[-1])
        raise InfeasibleInitializationError(
            f"initial trajectory ends outside the final box (component {int(np.argmax(cf))}, "
            f"s = {problem.s[-1]:.4f})")
    return min(ms, mf)


def project_initial_curve(problem, curve: Curve):
    """Project any user curve with a gain designed along it; ``(trajectory, margin)``.

    Raises :class:`InfeasibleInitializationError` if the result is not
    strictly inside every constraint.
    """
    gains = design_gain(problem, curve)
    traj = project(problem, curve, gains)
    return traj, _check_interior(problem, traj)


def initial_trajectory(problem, spec: InitSpec = InitSpec()):
    """Flatness seed along the frame path, re-projected onto the model.

    Returns ``(trajectory, margin)`` with ``margin`` the smallest ``-c`` over
    all constraints, which is positive.
    """
    curve = flat_curve(problem.path, problem.vehicle, spec, float(problem.prm[2]))
    traj, margin = project_initial_curve(problem, curve)
    d = trajectory_defect(problem, traj)
    if not d < 1e-8:
        raise InfeasibleInitializationError(f"projected seed has RK4 defect {d:.2e}")
    return traj, margin


def initial_state(path, vehicle: VehicleParams, spec: InitSpec = InitSpec(),
                  margin: float = PITCH_MARGIN) -> np.ndarray:
    """Transverse state of the flatness seed at ``s = 0``."""
    return flat_curve(path, vehicle, spec, margin).x[0]
