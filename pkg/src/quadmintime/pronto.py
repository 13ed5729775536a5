"""Projection-operator Newton method on a uniform arc-length grid.

Trajectories live on the nodes ``s_k = k ds``.  Between nodes the input is
held constant and the state is advanced by one RK4 step, so a projected
trajectory satisfies its discrete dynamics exactly.  The cost is the
trapezoidal quadrature of the stage cost plus a terminal term.

A *problem* object supplies the model (see :class:`ProblemBase`): compiled
``field``, ``jac``, ``lam_hess`` and ``check`` kernels with the signatures of
:mod:`quadmintime.dynamics`, the frame rows on the half grid, and vectorized
stage/terminal cost terms.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numba
import numpy as np

from .cost import GN_REGULARIZATION, BarrierParams, Schedule
from .errors import (
    ConditioningError,
    DivergedProjectionError,
    GainDesignError,
    LineSearchError,
    QuadMintimeError,
)

log = logging.getLogger(__name__)

ARMIJO_ALPHA = 0.4
BACKTRACK = 0.5
GAMMA_MIN = 1e-6
RICCATI_TOL = 1e-6
GAIN_CAP = 1e8
NU_MIN = 1e-8
STALL_GAMMA = 1e-2
STALL_COUNT = 3

CHECK_MESSAGES = {
    1: "tangential velocity collapsed",
    2: "left the tube 1 - k w1 > 0",
    3: "pitch reached the Euler singularity margin",
    4: "state became non-finite",
}


@dataclass(frozen=True)
class Curve:
    """State-input curve on the node grid (not necessarily dynamically feasible)."""

    s: np.ndarray
    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        if self.x.shape[0] != self.s.size or self.u.shape[0] != self.s.size:
            raise ValueError("curve arrays must have one row per grid node")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.u))):
            raise ValueError("curve contains non-finite values")

    def __add__(self, other: "Curve") -> "Curve":
        return Curve(self.s, self.x + other.x, self.u + other.u)

    def scaled(self, gamma: float) -> "Curve":
        return Curve(self.s, gamma * self.x, gamma * self.u)


@dataclass(frozen=True)
class Trajectory(Curve):
    """Output of :func:`project`; satisfies the discrete dynamics."""


@dataclass(frozen=True)
class GainSchedule:
    K: np.ndarray
    P: np.ndarray
    residual: np.ndarray


@dataclass(frozen=True)
class DescentDirection:
    z: np.ndarray
    v: np.ndarray
    slope: float
    predicted: float
    gauss_newton: bool

    def as_curve(self, s) -> Curve:
        return Curve(s, self.z, self.v)


# --------------------------------------------------------------------------
# compiled kernels
# --------------------------------------------------------------------------

@numba.njit(cache=True)
def _rk4(field, x, u, f0, fm, f1, prm, h):
    k1 = field(x, u, f0, prm)
    k2 = field(x + 0.5 * h * k1, u, fm, prm)
    k3 = field(x + 0.5 * h * k2, u, fm, prm)
    k4 = field(x + h * k3, u, f1, prm)
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@numba.njit(cache=True)
def _project_kernel(field, check, frames, prm, x0, xc, uc, K, h):
    n = xc.shape[0]
    X = np.empty_like(xc)
    U = np.empty_like(uc)
    x = x0.copy()
    for k in range(n):
        code = check(x, frames[2 * k], prm)
        if code != 0:
            return X, U, k, code
        X[k] = x
        u = uc[k] + K[k] @ (xc[k] - x)
        U[k] = u
        if k == n - 1:
            break
        x = _rk4(field, x, u, frames[2 * k], frames[2 * k + 1], frames[2 * k + 2], prm, h)
    return X, U, -1, 0


@numba.njit(cache=True)
def _defect_kernel(field, frames, prm, X, U, h):
    n = X.shape[0]
    d = np.zeros(n - 1)
    for k in range(n - 1):
        xn = _rk4(field, X[k], U[k], frames[2 * k], frames[2 * k + 1], frames[2 * k + 2], prm, h)
        d[k] = np.max(np.abs(xn - X[k + 1])) / max(1.0, np.max(np.abs(X[k + 1])))
    return d


@numba.njit(cache=True)
def _linearize_kernel(field, jac, frames, prm, X, U, h):
    """Discrete RK4 Jacobians plus continuous Jacobians at nodes and midpoints."""
    n = X.shape[0]
    nx = X.shape[1]
    nu = U.shape[1]
    Ad = np.zeros((n - 1, nx, nx))
    Bd = np.zeros((n - 1, nx, nu))
    Ac = np.zeros((n, nx, nx))
    Bc = np.zeros((n, nx, nu))
    Am = np.zeros((n - 1, nx, nx))
    Bm = np.zeros((n - 1, nx, nu))
    I = np.eye(nx)
    for k in range(n):
        x = X[k]
        u = U[k]
        f0 = frames[2 * k]
        A1, B1 = jac(x, u, f0, prm)
        Ac[k] = A1
        Bc[k] = B1
        if k == n - 1:
            break
        fm = frames[2 * k + 1]
        f1 = frames[2 * k + 2]
        k1 = field(x, u, f0, prm)
        x2 = x + 0.5 * h * k1
        k2 = field(x2, u, fm, prm)
        A2, B2 = jac(x2, u, fm, prm)
        x3 = x + 0.5 * h * k2
        k3 = field(x3, u, fm, prm)
        A3, B3 = jac(x3, u, fm, prm)
        x4 = x + h * k3
        A4, B4 = jac(x4, u, f1, prm)
        M2x = A2 @ (I + 0.5 * h * A1)
        M2u = A2 @ (0.5 * h * B1) + B2
        M3x = A3 @ (I + 0.5 * h * M2x)
        M3u = A3 @ (0.5 * h * M2u) + B3
        M4x = A4 @ (I + h * M3x)
        M4u = A4 @ (h * M3u) + B4
        Ad[k] = I + h / 6.0 * (A1 + 2.0 * M2x + 2.0 * M3x + M4x)
        Bd[k] = h / 6.0 * (B1 + 2.0 * M2u + 2.0 * M3u + M4u)
        xm = 0.5 * (X[k] + X[k + 1])
        A5, B5 = jac(xm, u, fm, prm)
        Am[k] = A5
        Bm[k] = B5
    return Ad, Bd, Ac, Bc, Am, Bm


@numba.njit(cache=True)
def _costate_hess_kernel(lam_hess, frames, prm, X, U, lam_next):
    n = X.shape[0] - 1
    nz = X.shape[1] + U.shape[1]
    out = np.zeros((n, nz, nz))
    for k in range(n):
        out[k] = lam_hess(X[k], U[k], frames[2 * k], prm, lam_next[k])
    return out


@numba.njit(cache=True)
def _dre_rhs(A, S, Q, P):
    return A.T @ P + P @ A - P @ S @ P + Q


@numba.njit(cache=True)
def _dre_interval(A0, Am, A1, S0, Sm, S1, Q, P, h, m):
    """Integrate dP/dtau over one interval with ``m`` RK4 substeps.

    Coefficients are quadratic Lagrange interpolants through the interval
    start (``0``), midpoint and end (``1``).
    """
    hs = h / m
    for j in range(m):
        th0 = j / m
        thm = (j + 0.5) / m
        th1 = (j + 1.0) / m
        Aa = _lagrange(A0, Am, A1, th0)
        Ab = _lagrange(A0, Am, A1, thm)
        Ac = _lagrange(A0, Am, A1, th1)
        Sa = _lagrange(S0, Sm, S1, th0)
        Sb = _lagrange(S0, Sm, S1, thm)
        Sc = _lagrange(S0, Sm, S1, th1)
        k1 = _dre_rhs(Aa, Sa, Q, P)
        k2 = _dre_rhs(Ab, Sb, Q, P + 0.5 * hs * k1)
        k3 = _dre_rhs(Ab, Sb, Q, P + 0.5 * hs * k2)
        k4 = _dre_rhs(Ac, Sc, Q, P + hs * k3)
        P = P + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        P = 0.5 * (P + P.T)
    return P


@numba.njit(cache=True)
def _lagrange(y0, ym, y1, th):
    l0 = 2.0 * (th - 0.5) * (th - 1.0)
    lm = -4.0 * th * (th - 1.0)
    l1 = 2.0 * th * (th - 0.5)
    return l0 * y0 + lm * ym + l1 * y1


@numba.njit(cache=True)
def _riccati_kernel(Ac, Bc, Am, Bm, Q, Rinv, PL, h, tol, cap):
    n = Ac.shape[0]
    nx = Ac.shape[1]
    P = np.zeros((n, nx, nx))
    resid = np.zeros(n)
    P[n - 1] = PL
    S = np.empty((n, nx, nx))
    for k in range(n):
        S[k] = Bc[k] @ Rinv @ Bc[k].T
    for k in range(n - 2, -1, -1):
        Pk = P[k + 1]
        Smid = Bm[k] @ Rinv @ Bm[k].T
        # backward in s is forward in tau = L - s: start at node k+1, end at node k
        # stiffness estimate; the step-doubling test below has the final say
        rho = 2.0 * np.sqrt(np.sum(Ac[k] ** 2)) + np.sqrt(np.sum((S[k + 1] @ Pk) ** 2))
        m = max(1, int(math.ceil(h * rho / 0.5)))
        while True:
            full = _dre_interval(Ac[k + 1], Am[k], Ac[k], S[k + 1], Smid, S[k], Q, Pk, h, m)
            fine = _dre_interval(Ac[k + 1], Am[k], Ac[k], S[k + 1], Smid, S[k], Q, Pk, h, 2 * m)
            scale = max(1.0, np.max(np.abs(fine)))
            err = np.max(np.abs(full - fine)) / scale
            if err <= tol or m >= 4096:
                break
            m *= 2
        if not np.all(np.isfinite(fine)) or np.max(np.abs(fine)) > cap:
            return P, resid, k
        P[k] = fine
        resid[k] = err
    return P, resid, -1


@numba.njit(cache=True)
def _chol_solve(M, rhs):
    """Solve ``M X = rhs`` for SPD ``M``; returns (X, ok)."""
    n = M.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = M[i, j]
            for p in range(j):
                s -= L[i, p] * L[j, p]
            if i == j:
                if s <= 0.0 or not np.isfinite(s):
                    return rhs * 0.0, False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    Y = np.empty_like(rhs)
    for c in range(rhs.shape[1]):
        for i in range(n):
            s = rhs[i, c]
            for p in range(i):
                s -= L[i, p] * Y[p, c]
            Y[i, c] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = Y[i, c]
            for p in range(i + 1, n):
                s -= L[p, i] * Y[p, c]
            Y[i, c] = s / L[i, i]
    return Y, True


@numba.njit(cache=True)
def _lq_kernel(Ad, Bd, W, q, HN, qN):
    """Affine-quadratic regulator sweep; returns (z, v, slope, quad, fail_index)."""
    n = W.shape[0]
    nx = Ad.shape[1]
    nu = Bd.shape[2]
    Kfb = np.zeros((n, nu, nx))
    kff = np.zeros((n, nu))
    P = np.zeros((nx, nx))
    p = np.zeros(nx)
    for k in range(n - 1, -1, -1):
        Wk = W[k]
        if k == n - 1:
            Qxx = Wk[:nx, :nx] + HN
            qx = q[k, :nx] + qN
            Quu = Wk[nx:, nx:].copy()
            Qux = Wk[nx:, :nx].copy()
            qu = q[k, nx:].copy()
        else:
            A = Ad[k]
            B = Bd[k]
            PA = P @ A
            PB = P @ B
            Qxx = Wk[:nx, :nx] + A.T @ PA
            Quu = Wk[nx:, nx:] + B.T @ PB
            Qux = Wk[nx:, :nx] + B.T @ PA
            qx = q[k, :nx] + A.T @ p
            qu = q[k, nx:] + B.T @ p
        Quu = 0.5 * (Quu + Quu.T)
        rhs = np.empty((nu, nx + 1))
        rhs[:, :nx] = Qux
        rhs[:, nx] = qu
        sol, ok = _chol_solve(Quu, rhs)
        if not ok:
            return np.zeros((n, nx)), np.zeros((n, nu)), 0.0, 0.0, k
        Kk = -sol[:, :nx]
        kk = -sol[:, nx]
        Kfb[k] = Kk
        kff[k] = kk
        P = Qxx + Kk.T @ Qux + Qux.T @ Kk + Kk.T @ Quu @ Kk
        P = 0.5 * (P + P.T)
        p = qx + Kk.T @ qu + Qux.T @ kk + Kk.T @ (Quu @ kk)
    z = np.zeros((n, nx))
    v = np.zeros((n, nu))
    for k in range(n):
        v[k] = Kfb[k] @ z[k] + kff[k]
        if k < n - 1:
            z[k + 1] = Ad[k] @ z[k] + Bd[k] @ v[k]
    slope = 0.0
    quad = 0.0
    for k in range(n):
        zk = np.concatenate((z[k], v[k]))
        slope += q[k] @ zk
        quad += zk @ (W[k] @ zk)
    slope += qN @ z[n - 1]
    quad += z[n - 1] @ (HN @ z[n - 1])
    return z, v, slope, quad, -1


@numba.njit(cache=True)
def _closed_loop_costate(Ad, Bd, K, q, qN):
    """Costates of the projected functional: ``lam_k = a_k + (A - B K)^T lam_{k+1}``."""
    n = q.shape[0]
    nx = Ad.shape[1]
    lam = np.zeros((n, nx))
    lam[n - 1] = q[n - 1, :nx] - K[n - 1].T @ q[n - 1, nx:] + qN
    for k in range(n - 2, -1, -1):
        Acl = Ad[k] - Bd[k] @ K[k]
        lam[k] = q[k, :nx] - K[k].T @ q[k, nx:] + Acl.T @ lam[k + 1]
    return lam


# --------------------------------------------------------------------------
# problem interface
# --------------------------------------------------------------------------

class ModelKernels:
    """Grid sweeps bound to one model's compiled ``field``/``jac``/``lam_hess``/``check``.

    Kernels that receive compiled functions as arguments are recompiled in
    every process; models used often ship cached specializations with the
    same interface instead.
    """

    def __init__(self, field, jac, lam_hess, check):
        self.field, self.jac, self.lam_hess, self.check = field, jac, lam_hess, check

    def project(self, frames, prm, x0, xc, uc, K, h):
        return _project_kernel(self.field, self.check, frames, prm, x0, xc, uc, K, h)

    def defect(self, frames, prm, X, U, h):
        return _defect_kernel(self.field, frames, prm, X, U, h)

    def linearize(self, frames, prm, X, U, h):
        return _linearize_kernel(self.field, self.jac, frames, prm, X, U, h)

    def costate_hess(self, frames, prm, X, U, lam_next):
        return _costate_hess_kernel(self.lam_hess, frames, prm, X, U, lam_next)


class ProblemBase:
    """Defaults shared by concrete problems.

    Subclasses set ``nx``, ``nu``, ``s`` (node grid), ``ds``, ``x0``,
    ``frames_half``, ``prm`` and the compiled kernels ``field``, ``jac``,
    ``lam_hess``, ``check``, and implement :meth:`stage_terms` and
    :meth:`terminal_terms`.
    """

    nx: int
    nu: int

    @property
    def kernels(self):
        k = self.__dict__.get("_kernels")
        if k is None:
            k = ModelKernels(self.field, self.jac, self.lam_hess, self.check)
            self.__dict__["_kernels"] = k
        return k

    @property
    def n_nodes(self) -> int:
        return self.s.size

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.n_nodes, self.ds)
        w[0] = w[-1] = 0.5 * self.ds
        return w

    def gain_weights(self):
        """``(Q_K, R_K, P_L)`` for the projection-operator regulator."""
        Q = getattr(self, "Q_K", None)
        R = getattr(self, "R_K", None)
        Q = np.eye(self.nx) if Q is None else Q
        R = np.eye(self.nu) if R is None else R
        PL = getattr(self, "P_L", None)
        return Q, R, (Q if PL is None else PL)

    def constraint_values(self, X, U):
        return None

    def elapsed_time(self, traj) -> float:
        """Running-cost integral; problems without a time interpretation return nan."""
        return float("nan")

    def final_constraint_values(self, xN):
        return None

    def stage_terms(self, X, U, params: BarrierParams, derivatives: bool = True):
        raise NotImplementedError

    def terminal_terms(self, xN, params: BarrierParams, derivatives: bool = True):
        raise NotImplementedError


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def project(problem, curve: Curve, gains, x0=None) -> Trajectory:
    """Feedback projection of ``curve`` onto the trajectories of the model."""
    K = gains.K if isinstance(gains, GainSchedule) else np.asarray(gains, dtype=float)
    x0 = problem.x0 if x0 is None else np.asarray(x0, dtype=float)
    if K.shape != (problem.n_nodes, problem.nu, problem.nx):
        raise ValueError("gain schedule has the wrong shape")
    X, U, fail, code = problem.kernels.project(
        problem.frames_half, problem.prm, x0, np.ascontiguousarray(curve.x),
        np.ascontiguousarray(curve.u), np.ascontiguousarray(K), problem.ds)
    if fail >= 0:
        s = float(problem.s[fail])
        raise DivergedProjectionError(
            f"projection diverged at s = {s:.4f}: {CHECK_MESSAGES.get(code, code)}",
            s=s, index=fail)
    return Trajectory(problem.s, X, U)


def trajectory_defect(problem, traj: Curve) -> float:
    """Largest relative RK4 defect between adjacent nodes."""
    d = problem.kernels.defect(problem.frames_half, problem.prm,
                       np.ascontiguousarray(traj.x), np.ascontiguousarray(traj.u), problem.ds)
    return float(np.max(d)) if d.size else 0.0


@dataclass
class Linearization:
    Ad: np.ndarray
    Bd: np.ndarray
    Ac: np.ndarray
    Bc: np.ndarray
    Am: np.ndarray
    Bm: np.ndarray


def linearize(problem, traj: Curve) -> Linearization:
    out = problem.kernels.linearize(problem.frames_half, problem.prm,
                            np.ascontiguousarray(traj.x), np.ascontiguousarray(traj.u),
                            problem.ds)
    return Linearization(*out)


def design_gain(problem, traj: Curve, lin: Optional[Linearization] = None,
                tol: float = RICCATI_TOL) -> GainSchedule:
    """Time-varying LQR gain ``K = R^-1 B^T P`` from the differential Riccati equation."""
    lin = linearize(problem, traj) if lin is None else lin
    Q, R, PL = problem.gain_weights()
    Rinv = np.linalg.inv(R)
    if not np.any(Q) and not np.any(PL):
        n = problem.n_nodes
        return GainSchedule(np.zeros((n, problem.nu, problem.nx)),
                            np.zeros((n, problem.nx, problem.nx)), np.zeros(n))
    P, resid, fail = _riccati_kernel(lin.Ac, lin.Bc, lin.Am, lin.Bm, Q, Rinv,
                                     np.asarray(PL, dtype=float), problem.ds, tol, GAIN_CAP)
    if fail >= 0:
        raise GainDesignError(
            f"Riccati solution blew up at s = {problem.s[fail]:.4f}; "
            "check the trajectory or the regulator weights")
    K = np.einsum("ij,njk,nkl->nil", Rinv, np.transpose(lin.Bc, (0, 2, 1)), P)
    if not np.all(np.isfinite(K)) or np.max(np.abs(K)) > GAIN_CAP:
        raise GainDesignError("gain schedule is not finite or exceeds the cap")
    return GainSchedule(K, P, resid)


def cost(problem, traj: Curve, params: BarrierParams) -> float:
    """Barrier-augmented cost of a trajectory."""
    l = problem.stage_terms(traj.x, traj.u, params, derivatives=False)
    val = float(problem.weights @ l)
    val += problem.terminal_terms(traj.x[-1], params, derivatives=False)
    return val


def min_margin(problem, traj: Curve) -> float:
    """Smallest ``-c`` over all stage and final constraints (``inf`` if none)."""
    return min(margins(problem, traj))


def search_direction(problem, traj: Trajectory, params: BarrierParams,
                     gains: Optional[GainSchedule] = None,
                     lin: Optional[Linearization] = None,
                     gauss_newton: Optional[bool] = None) -> DescentDirection:
    """Newton step: minimize ``Dg.zeta + 1/2 D2g(zeta, zeta)`` on the linearized dynamics.

    With ``gauss_newton=None`` the exact second variation is tried first and
    the Gauss-Newton model (plus a small ridge) is used if the regulator
    sweep meets a non positive-definite input Hessian.
    """
    lin = linearize(problem, traj) if lin is None else lin
    w = problem.weights
    _, g, H, Hgn = problem.stage_terms(traj.x, traj.u, params, derivatives=True)
    _, gN, HN = problem.terminal_terms(traj.x[-1], params, derivatives=True)
    q = w[:, None] * g
    modes = [False, True] if gauss_newton is None else [gauss_newton]
    fail = 0
    for use_gn in modes:
        if use_gn:
            Hs = Hgn + GN_REGULARIZATION * np.eye(Hgn.shape[1])
            W = w[:, None, None] * Hs
        else:
            if gains is None:
                gains = design_gain(problem, traj, lin)
            lam = _closed_loop_costate(lin.Ad, lin.Bd, gains.K, q, gN)
            W = w[:, None, None] * H
            W[:-1] += problem.ds * problem.kernels.costate_hess(
                problem.frames_half, problem.prm,
                np.ascontiguousarray(traj.x), np.ascontiguousarray(traj.u), lam[1:])
        z, v, slope, quad, fail = _lq_kernel(lin.Ad, lin.Bd, W, q, HN, gN)
        if fail < 0:
            return DescentDirection(z, v, float(slope), float(slope + 0.5 * quad), use_gn)
    raise ConditioningError(
        f"regulator input Hessian not positive definite at s = {problem.s[fail]:.4f}")


def margins(problem, traj: Curve):
    """``(stage margin, final margin)``: smallest ``-c`` in each group (``inf`` if empty)."""
    c = problem.constraint_values(traj.x, traj.u)
    cf = problem.final_constraint_values(traj.x[-1])
    ms = float(-np.max(c)) if c is not None and c.size else np.inf
    mf = float(-np.max(cf)) if cf is not None and cf.size else np.inf
    return ms, mf


def is_strictly_feasible(problem, traj: Curve) -> bool:
    return min(margins(problem, traj)) > 0.0


@dataclass
class StepResult:
    gamma: float
    trajectory: Trajectory
    cost: float
    stage_blocked: bool = False
    final_blocked: bool = False


def _backtrack(problem, traj, zeta, params, gains, g0, alpha, factor, gamma_min):
    step = zeta.as_curve(traj.s)
    gamma = 1.0
    blocked = [False, False]
    while gamma >= gamma_min:
        try:
            cand = project(problem, traj + step.scaled(gamma), gains)
        except DivergedProjectionError:
            cand = None
        if cand is not None:
            ms, mf = margins(problem, cand)
            if ms > 0.0 and mf > 0.0:
                gc = cost(problem, cand, params)
                if gc <= g0 + alpha * gamma * zeta.slope:
                    return StepResult(gamma, cand, gc, *blocked)
            else:
                blocked[0] |= ms <= 0.0
                blocked[1] |= mf <= 0.0
        gamma *= factor
    return StepResult(0.0, traj, g0, *blocked)


def line_search(problem, traj: Trajectory, zeta: DescentDirection, params: BarrierParams,
                gains: GainSchedule, g0: Optional[float] = None,
                alpha: float = ARMIJO_ALPHA, factor: float = BACKTRACK,
                gamma_min: float = GAMMA_MIN) -> StepResult:
    """Largest ``gamma`` in ``{1, factor, factor^2, ...}`` passing the Armijo test.

    Steps whose projection diverges or leaves the strict interior of the
    constraints are rejected like an Armijo failure.
    """
    if not zeta.slope < 0:
        raise LineSearchError("search direction is not a descent direction",
                              grad_norm=abs(zeta.slope))
    g0 = cost(problem, traj, params) if g0 is None else g0
    res = _backtrack(problem, traj, zeta, params, gains, g0, alpha, factor, gamma_min)
    if res.gamma == 0.0:
        err = LineSearchError(
            f"no acceptable step above {gamma_min} (|Dg.zeta| = {abs(zeta.slope):.3e})",
            grad_norm=abs(zeta.slope))
        err.step = res
        raise err
    return res


@dataclass
class IterationRecord:
    iteration: int
    gamma: float
    cost: float
    slope: float
    min_margin: float
    gauss_newton: bool
    nu: float
    nu_f: float

    def as_dict(self):
        return {"iteration": self.iteration, "gamma": self.gamma, "cost": self.cost,
                "dg_zeta": abs(self.slope), "min_margin": self.min_margin,
                "gauss_newton": self.gauss_newton, "nu": self.nu, "nu_f": self.nu_f}


@dataclass
class FixedBarrierResult:
    trajectory: Trajectory
    cost: float
    converged: bool
    iterations: int
    params: BarrierParams
    records: list = field(default_factory=list)
    message: str = ""
    stalled: bool = False


def _sharpen(params: BarrierParams, step: StepResult, ms: float, mf: float,
             factor: float) -> BarrierParams:
    # only while the iterate sits on the quadratic branch; on the log branch
    # an infeasible trial step is an ordinary overshoot
    nu, nu_f = params.nu, params.nu_f
    if step.stage_blocked and nu > ms:
        nu = max(min(nu * factor, 0.5 * ms), NU_MIN)
    if step.final_blocked and nu_f > mf:
        nu_f = max(min(nu_f * factor, 0.5 * mf), NU_MIN)
    return replace(params, nu=nu, nu_f=nu_f)


def solve_fixed_barrier(problem, traj0: Trajectory, params: BarrierParams,
                        tol: Optional[float] = None, max_iter: int = 50,
                        callback: Optional[Callable] = None,
                        adapt_nu: bool = True, nu_factor: float = 0.2) -> FixedBarrierResult:
    """Newton iterations ``xi <- P(xi + gamma zeta)`` at fixed barrier weights.

    Stops when ``|Dg.zeta| < tol`` (default ``1e-6 (1 + |g|)``).  Failures
    return the last accepted iterate with ``converged = False``.

    With ``adapt_nu`` the barrier knee ``nu`` (``nu_f``) is lowered below the
    current margin whenever a step was rejected for leaving the feasible set
    while the iterate sits on the quadratic branch: the relaxed optimum then
    lies outside and the extension no longer keeps iterates off the boundary.
    The effective parameters are returned in ``result.params``.

    A run of feasibility-limited tiny steps ends the solve as *stalled*: the
    iterate touches a constraint so closely that second-order effects of the
    projection exceed the margin for every trial step.
    """
    traj = traj0
    g = cost(problem, traj, params)
    records = []
    tiny = 0

    def done(ok, it, msg, stalled=False):
        return FixedBarrierResult(traj, g, ok, it, params, records, msg, stalled)

    for it in range(max_iter):
        try:
            lin = linearize(problem, traj)
            gains = design_gain(problem, traj, lin)
            zeta = search_direction(problem, traj, params, gains, lin)
        except QuadMintimeError as exc:
            return done(False, it, str(exc))
        thr = tol if tol is not None else 1e-6 * (1.0 + abs(g))
        if abs(zeta.slope) < thr:
            return done(True, it, "converged")
        if not zeta.slope < 0:
            return done(False, it, "search direction is not a descent direction")
        step = _backtrack(problem, traj, zeta, params, gains, g, ARMIJO_ALPHA, BACKTRACK,
                          GAMMA_MIN)
        blocked = step.stage_blocked or step.final_blocked
        if step.gamma == 0.0 and not blocked:
            return done(False, it, f"line search failed: no acceptable step above {GAMMA_MIN} "
                                   f"(|Dg.zeta| = {abs(zeta.slope):.3e})")
        if step.gamma > 0.0:
            traj, g = step.trajectory, step.cost
        ms, mf = margins(problem, traj)
        rec = IterationRecord(it + 1, step.gamma, g, zeta.slope, min(ms, mf),
                              zeta.gauss_newton, params.nu, params.nu_f)
        records.append(rec)
        if callback is not None:
            callback(rec, traj)
        log.debug("newton %d: gamma=%.3g cost=%.9g |Dg.z|=%.3e margin=%.3e", rec.iteration,
                  step.gamma, g, abs(zeta.slope), rec.min_margin)
        if not blocked:
            tiny = 0
            continue
        sharper = _sharpen(params, step, ms, mf, nu_factor) if adapt_nu else params
        if sharper != params:
            params = sharper
            g = cost(problem, traj, params)
            continue
        tiny = tiny + 1 if step.gamma < STALL_GAMMA else 0
        if step.gamma == 0.0 or tiny >= STALL_COUNT:
            return done(False, it + 1, f"stalled at the constraint boundary "
                                       f"(margin {min(ms, mf):.2e}, |Dg.zeta| = "
                                       f"{abs(zeta.slope):.3e})", stalled=True)
    return done(False, max_iter, "iteration cap reached")


@dataclass
class OuterRecord:
    outer: int
    params: BarrierParams
    cost: float
    time: float
    min_margin: float
    iterations: int
    converged: bool
    message: str
    seconds: float
    newton: list = field(default_factory=list)
    stalled: bool = False

    def as_dict(self):
        return {"outer": self.outer, **self.params.as_dict(), "cost": self.cost,
                "T": self.time, "min_margin": self.min_margin,
                "iterations": self.iterations, "converged": self.converged,
                "stalled": self.stalled, "message": self.message, "seconds": self.seconds}


@dataclass
class ContinuationReport:
    outer: list
    success: bool
    message: str


def continuation(problem, traj0: Trajectory, schedule: Schedule, tol: Optional[float] = None,
                 max_iter: int = 50, callback: Optional[Callable] = None):
    """Barrier continuation: solve, shrink ``(eps, nu, eps_f, nu_f)``, repeat.

    Returns ``(trajectory, report)``; on a stage failure the last accepted
    (feasible) trajectory is returned with ``report.success = False``.
    """
    traj = traj0
    outer = []
    ok, msg = True, "completed"
    carry = None
    prev = None
    for i, nominal in enumerate(schedule.params()):
        if nominal == prev and outer and (outer[-1].converged or outer[-1].stalled):
            # floors reached and the last stage finished: nothing left to do
            break
        prev = nominal
        params = nominal
        if carry is not None:
            # a sharpened knee keeps its ratio to eps as the schedule shrinks
            f = schedule.factor
            params = replace(params, nu=min(params.nu, f * carry.nu),
                             nu_f=min(params.nu_f, f * carry.nu_f))
        t0 = time.perf_counter()

        def cb(rec, tr, _i=i):
            if callback is not None:
                callback(_i, rec, tr)

        res = solve_fixed_barrier(problem, traj, params, tol=tol, max_iter=max_iter, callback=cb)
        traj = res.trajectory
        carry = res.params
        outer.append(OuterRecord(i, res.params, res.cost, problem.elapsed_time(traj),
                                 min_margin(problem, traj), res.iterations, res.converged,
                                 res.message, time.perf_counter() - t0, res.records,
                                 res.stalled))
        log.info("outer %d: eps=%.2e T=%.5f margin=%.3e newton=%d %s", i, params.eps,
                 outer[-1].time, outer[-1].min_margin, res.iterations, res.message)
        if not (res.converged or res.stalled) and res.message != "iteration cap reached":
            ok, msg = False, f"outer iteration {i}: {res.message}"
            break
    return traj, ContinuationReport(outer, ok, msg)
