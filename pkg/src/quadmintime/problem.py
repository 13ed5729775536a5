"""Minimum-time problem in transverse coordinates, in the form the solver expects."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .corridor import CorridorSpec, FinalBox, InputStateBounds, StageConstraints
from .cost import BarrierParams, beta, beta_derivatives, running_cost_derivatives
from .dynamics import (
    NU,
    NX,
    PITCH_MARGIN,
    VehicleParams,
    check_transverse_kernel,
    transverse_field_kernel,
    transverse_jac_kernel,
    transverse_lam_hess_kernel,
)
from .errors import TransverseDomainError
from .framepath import FramePath
from .pronto import ProblemBase
from .transverse_kernels import TransverseKernels


class TransverseProblem(ProblemBase):
    """Augmented cost ``int (1 - k w1)/(t'v) + eps sum beta_nu(-c) ds + terminal``.

    Parameters
    ----------
    x0 : initial transverse state
    final_box : optional terminal region; with ``None`` there is no terminal cost
    gain_weights : optional ``(Q_K, R_K, P_L)`` for the projection regulator
    """

    nx = NX
    nu = NU
    field = staticmethod(transverse_field_kernel)
    jac = staticmethod(transverse_jac_kernel)
    lam_hess = staticmethod(transverse_lam_hess_kernel)
    check = staticmethod(check_transverse_kernel)
    kernels = TransverseKernels()

    def __init__(self, path: FramePath, vehicle: VehicleParams, bounds: InputStateBounds,
                 corridor: CorridorSpec, x0, final_box: Optional[FinalBox] = None,
                 gain_weights=None, pitch_margin: float = PITCH_MARGIN):
        self.path = path
        self.vehicle = vehicle
        self.bounds = bounds
        self.corridor = corridor
        self.final_box = final_box
        self.x0 = np.asarray(x0, dtype=float)
        if self.x0.shape != (NX,):
            raise ValueError("initial state must have 8 entries")
        self.s = path.s
        self.ds = path.ds
        self.frames_half = np.ascontiguousarray(path.frames_half)
        self.frames_nodes = np.ascontiguousarray(path.frames)
        self.prm = vehicle.as_array(pitch_margin)
        self.constraints = StageConstraints(bounds, corridor, path.n_nodes)
        if gain_weights is not None:
            self.Q_K, self.R_K, self.P_L = (np.asarray(a, dtype=float) for a in gain_weights)
        code = check_transverse_kernel(self.x0, self.frames_half[0], self.prm)
        if code != 0:
            raise TransverseDomainError("initial state outside the transverse domain")

    # ---- cost terms ----------------------------------------------------

    def stage_terms(self, X, U, params: BarrierParams, derivatives: bool = True):
        """Stage cost per node; with derivatives also ``(g, H, H_gn)`` over ``[xw, u]``."""
        l, gl, Hl, Hgn_l = running_cost_derivatives(X, self.frames_nodes)
        c = self.constraints.values(X, U)
        val = l + params.eps * np.sum(beta(-c, params.nu), axis=1)
        if not derivatives:
            return val
        d1, d2 = beta_derivatives(-c, params.nu)
        gb, hb = self.constraints.barrier_terms(X, U, d1, d2)
        g = params.eps * gb
        g[:, :NX] += gl
        H = params.eps * hb
        Hgn = H.copy()
        H[:, :NX, :NX] += Hl
        Hgn[:, :NX, :NX] += Hgn_l
        return val, g, H, Hgn

    def _final_parts(self, xN):
        box = self.final_box
        span = box.hi - box.lo
        z = (2.0 * xN - (box.hi + box.lo)) / span
        return span, z, z * z - 1.0

    def terminal_terms(self, xN, params: BarrierParams, derivatives: bool = True):
        if self.final_box is None:
            return 0.0 if not derivatives else (0.0, np.zeros(NX), np.zeros((NX, NX)))
        span, z, cf = self._final_parts(xN)
        val = params.eps_f * float(np.sum(beta(-cf, params.nu_f)))
        if not derivatives:
            return val
        d1, d2 = beta_derivatives(-cf, params.nu_f)
        dc = 4.0 * z / span
        grad = params.eps_f * (-d1 * dc)
        hess = np.diag(params.eps_f * (d2 * dc * dc - d1 * 8.0 / span ** 2))
        return val, grad, hess

    # ---- constraints ------------------------------------------------------

    def constraint_values(self, X, U):
        return self.constraints.values(X, U)

    def final_constraint_values(self, xN):
        if self.final_box is None:
            return None
        return self._final_parts(np.asarray(xN, dtype=float))[2]

    @property
    def constraint_names(self):
        return self.constraints.names

    def elapsed_time(self, traj) -> float:
        """Maneuver time ``T``: trapezoidal integral of the dilation factor."""
        l = running_cost_derivatives(traj.x, self.frames_nodes)[0]
        return float(self.weights @ l)
