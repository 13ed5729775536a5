"""Grid sweeps specialized to the transverse quadrotor model.

Same loops as the generic kernels in :mod:`quadmintime.pronto`, but the model
functions are module globals so numba can cache the compiled code on disk.
"""

from __future__ import annotations

import numba
import numpy as np

from .dynamics import (
    check_transverse_kernel as _check,
    transverse_field_kernel as _field,
    transverse_jac_kernel as _jac,
    transverse_lam_hess_kernel as _lam_hess,
)


@numba.njit(cache=True)
def _rk4(x, u, f0, fm, f1, prm, h):
    k1 = _field(x, u, f0, prm)
    k2 = _field(x + 0.5 * h * k1, u, fm, prm)
    k3 = _field(x + 0.5 * h * k2, u, fm, prm)
    k4 = _field(x + h * k3, u, f1, prm)
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@numba.njit(cache=True)
def project(frames, prm, x0, xc, uc, K, h):
    n = xc.shape[0]
    X = np.empty_like(xc)
    U = np.empty_like(uc)
    x = x0.copy()
    for k in range(n):
        code = _check(x, frames[2 * k], prm)
        if code != 0:
            return X, U, k, code
        X[k] = x
        u = uc[k] + K[k] @ (xc[k] - x)
        U[k] = u
        if k == n - 1:
            break
        x = _rk4(x, u, frames[2 * k], frames[2 * k + 1], frames[2 * k + 2], prm, h)
    return X, U, -1, 0


@numba.njit(cache=True)
def defect(frames, prm, X, U, h):
    n = X.shape[0]
    d = np.zeros(n - 1)
    for k in range(n - 1):
        xn = _rk4(X[k], U[k], frames[2 * k], frames[2 * k + 1], frames[2 * k + 2], prm, h)
        d[k] = np.max(np.abs(xn - X[k + 1])) / max(1.0, np.max(np.abs(X[k + 1])))
    return d


@numba.njit(cache=True)
def linearize(frames, prm, X, U, h):
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
        A1, B1 = _jac(x, u, f0, prm)
        Ac[k] = A1
        Bc[k] = B1
        if k == n - 1:
            break
        fm = frames[2 * k + 1]
        f1 = frames[2 * k + 2]
        k1 = _field(x, u, f0, prm)
        x2 = x + 0.5 * h * k1
        k2 = _field(x2, u, fm, prm)
        A2, B2 = _jac(x2, u, fm, prm)
        x3 = x + 0.5 * h * k2
        k3 = _field(x3, u, fm, prm)
        A3, B3 = _jac(x3, u, fm, prm)
        A4, B4 = _jac(x + h * k3, u, f1, prm)
        M2x = A2 @ (I + 0.5 * h * A1)
        M2u = A2 @ (0.5 * h * B1) + B2
        M3x = A3 @ (I + 0.5 * h * M2x)
        M3u = A3 @ (0.5 * h * M2u) + B3
        M4x = A4 @ (I + h * M3x)
        M4u = A4 @ (h * M3u) + B4
        Ad[k] = I + h / 6.0 * (A1 + 2.0 * M2x + 2.0 * M3x + M4x)
        Bd[k] = h / 6.0 * (B1 + 2.0 * M2u + 2.0 * M3u + M4u)
        A5, B5 = _jac(0.5 * (X[k] + X[k + 1]), u, fm, prm)
        Am[k] = A5
        Bm[k] = B5
    return Ad, Bd, Ac, Bc, Am, Bm


@numba.njit(cache=True)
def costate_hess(frames, prm, X, U, lam_next):
    n = X.shape[0] - 1
    nz = X.shape[1] + U.shape[1]
    out = np.zeros((n, nz, nz))
    for k in range(n):
        out[k] = _lam_hess(X[k], U[k], frames[2 * k], prm, lam_next[k])
    return out


class TransverseKernels:
    """Drop-in for :class:`quadmintime.pronto.ModelKernels`."""

    project = staticmethod(project)
    defect = staticmethod(defect)
    linearize = staticmethod(linearize)
    costate_hess = staticmethod(costate_hess)
