"""Arc length to time: ``t(s)`` from the dilation factor, and time-domain resampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .dynamics import VehicleParams, time_domain_field
from .errors import TransverseDomainError
from .framepath import FramePath, reconstruct_positions

DEFAULT_DT = 2e-3

STATE_COLUMNS = ("w1", "w2", "v1", "v2", "v3", "phi", "theta", "psi")
INPUT_COLUMNS = ("p", "q", "r", "F")
POSITION_COLUMNS = ("px", "py", "pz")
ARCLENGTH_COLUMNS = ("s", "t") + STATE_COLUMNS + INPUT_COLUMNS + POSITION_COLUMNS
TIME_COLUMNS = ("t", "s") + STATE_COLUMNS + INPUT_COLUMNS + POSITION_COLUMNS


@dataclass(frozen=True)
class TimeMap:
    s: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        if self.s.shape != self.t.shape or self.t[0] != 0.0:
            raise ValueError("time map needs matching arrays starting at t = 0")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time map must be strictly increasing")

    @property
    def T(self) -> float:
        return float(self.t[-1])

    def time_at(self, s):
        return np.interp(s, self.s, self.t)

    def arclength_at(self, t):
        return np.interp(t, self.t, self.s)


def dilation_samples(traj, path: FramePath) -> np.ndarray:
    """``(1 - k w1) / (t'v)`` at every node."""
    tv = np.einsum("ij,ij->i", path.tangents, traj.x[:, 2:5])
    a = 1.0 - path.curvature * traj.x[:, 0]
    if np.any(tv <= 0) or np.any(a <= 0):
        raise TransverseDomainError("time-map integrand is not positive")
    return a / tv


def build_time_map(traj, path: FramePath) -> TimeMap:
    """Trapezoidal ``t(s) = int_0^s (1 - k w1)/(t'v)``."""
    eta = dilation_samples(traj, path)
    t = np.concatenate(([0.0], np.cumsum(0.5 * path.ds * (eta[1:] + eta[:-1]))))
    return TimeMap(path.s.copy(), t)


@dataclass(frozen=True)
class TimeSeries:
    """Uniform-in-time samples; ``x`` is the time-domain state ``[p, v, Phi]``."""

    t: np.ndarray
    s: np.ndarray
    xw: np.ndarray
    u: np.ndarray
    position: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return np.hstack((self.position, self.xw[:, 2:8]))

    def table(self) -> np.ndarray:
        return np.column_stack((self.t, self.s, self.xw, self.u, self.position))


def interval_average_inputs(t_nodes, u_nodes, t) -> np.ndarray:
    """Averages of the node-held inputs ``u_nodes`` over ``[t_j, t_{j+1})``."""
    # cumulative integral of the zero-order-hold signal, evaluated by interpolation
    cum = np.vstack((np.zeros(u_nodes.shape[1]),
                     np.cumsum(np.diff(t_nodes)[:, None] * u_nodes[:-1], axis=0)))
    ic = np.column_stack([np.interp(t, t_nodes, cum[:, j]) for j in range(cum.shape[1])])
    u = np.empty((t.size, u_nodes.shape[1]))
    u[:-1] = np.diff(ic, axis=0) / np.diff(t)[:, None]
    u[-1] = u_nodes[-1]
    return u


def to_time_domain(traj, tmap: TimeMap, path: FramePath, dt: float = DEFAULT_DT) -> TimeSeries:
    """Resample a trajectory uniformly in time (last sample exactly at ``T``).

    States and positions use cubic Hermite interpolation in ``t``. Each exported
    input is the average of the piecewise-constant node inputs over its sample
    interval, so a zero-order hold on the coarse grid delivers the same
    impulse; point sampling would shift the bang-bang switch instants by up
    to ``dt``.
    """
    n = max(2, int(np.floor(tmap.T / dt + 1e-9)) + 1)
    t = np.arange(n) * dt
    if tmap.T - t[-1] > 1e-12:
        t = np.append(t, tmap.T)
    s = tmap.arclength_at(t)
    pos_nodes = reconstruct_positions(path, traj.x[:, 0], traj.x[:, 1])
    dxw = np.gradient(traj.x, tmap.t, axis=0, edge_order=2)
    # node velocities are the exact position derivatives
    xw = CubicHermiteSpline(tmap.t, traj.x, dxw, axis=0)(t)
    position = CubicHermiteSpline(tmap.t, pos_nodes, traj.x[:, 2:5], axis=0)(t)
    u = interval_average_inputs(tmap.t, traj.u, t)
    return TimeSeries(t, s, xw, u, position)


def simulate_time_domain(x0, t, u, params: VehicleParams, substeps: int = 4) -> np.ndarray:
    """RK4 re-simulation of ``p' = v, v' = g e3 - F/m R e3, Phi' = J omega``.

    ``u[k]`` is held on ``[t_k, t_{k+1})``; returns the state at every ``t_k``.
    """
    def f(x, uk):
        return time_domain_field(x, uk, params, 0.0)

    X = np.empty((len(t), 9))
    X[0] = x0
    for k in range(len(t) - 1):
        h = (t[k + 1] - t[k]) / substeps
        x = X[k]
        for _ in range(substeps):
            k1 = f(x, u[k])
            k2 = f(x + 0.5 * h * k1, u[k])
            k3 = f(x + 0.5 * h * k2, u[k])
            k4 = f(x + h * k3, u[k])
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        X[k + 1] = x
    return X
