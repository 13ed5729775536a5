"""Arc-length time cost, approximate log barrier and their derivatives."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .corridor import (
    BoundProfile,
    CorridorSpec,
    FinalBox,
    InputStateBounds,
    StageConstraints,
    eval_final_constraints,
)
from .errors import TransverseDomainError
from .framepath import FrenetFrame

GN_REGULARIZATION = 1e-6


@dataclass(frozen=True)
class BarrierParams:
    eps: float = 1.0
    nu: float = 1.0
    eps_f: float = 1.0
    nu_f: float = 1.0

    def __post_init__(self):
        for name in ("eps", "nu", "eps_f", "nu_f"):
            if not getattr(self, name) > 0:
                raise ValueError(f"barrier parameter {name} must be positive")

    def as_dict(self):
        return {"eps": self.eps, "nu": self.nu, "eps_f": self.eps_f, "nu_f": self.nu_f}


@dataclass(frozen=True)
class Schedule:
    """Geometric decrease of all four barrier parameters, clipped at floors."""

    factor: float = 0.2
    eps_floor: float = 1e-4
    nu_floor: float = 1e-4
    eps_f_floor: float = 1e-4
    nu_f_floor: float = 1e-4
    max_outer: int = 8
    start: BarrierParams = BarrierParams()

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError("schedule factor must lie in (0, 1)")
        if min(self.eps_floor, self.nu_floor, self.eps_f_floor, self.nu_f_floor) <= 0:
            raise ValueError("schedule floors must be positive")
        if self.max_outer < 1:
            raise ValueError("schedule needs at least one outer iteration")

    def params(self):
        """Barrier parameters for each outer iteration."""
        p = self.start
        out = [p]
        for _ in range(self.max_outer - 1):
            p = BarrierParams(max(p.eps * self.factor, self.eps_floor),
                              max(p.nu * self.factor, self.nu_floor),
                              max(p.eps_f * self.factor, self.eps_f_floor),
                              max(p.nu_f * self.factor, self.nu_f_floor))
            out.append(p)
        return out


# --------------------------------------------------------------------------
# barrier function
# --------------------------------------------------------------------------

def beta(x, l):
    """Log barrier with a quadratic extension below ``l``; C1 at ``x = l``."""
    x = np.asarray(x, dtype=float)
    inner = x > l
    safe = np.where(inner, x, 1.0)
    out = np.where(inner, -np.log(safe),
                   -np.log(l) + 0.5 * (((x - 2.0 * l) / l) ** 2 - 1.0))
    return out if out.ndim else float(out)


def beta_derivatives(x, l):
    """First and second derivative of :func:`beta`."""
    x = np.asarray(x, dtype=float)
    inner = x > l
    safe = np.where(inner, x, 1.0)
    d1 = np.where(inner, -1.0 / safe, (x - 2.0 * l) / (l * l))
    d2 = np.where(inner, 1.0 / (safe * safe), 1.0 / (l * l))
    return d1, d2


# --------------------------------------------------------------------------
# single-point API
# --------------------------------------------------------------------------

def running_cost(xw, frame: FrenetFrame) -> float:
    """Time spent per unit arc length, ``(1 - k w1) / (t . v)``."""
    xw = np.asarray(xw, dtype=float)
    tv = frame.t @ xw[2:5]
    if not tv > 0:
        raise TransverseDomainError("tangential velocity t'v must be positive")
    return (1.0 - frame.k * xw[0]) / tv


def augmented_stage_cost(xw, u, frame: FrenetFrame, constraints, params: BarrierParams) -> float:
    """Running cost plus ``eps * sum beta_nu(-c_j)``; ``constraints`` are the c_j values."""
    c = np.asarray(constraints, dtype=float)
    return running_cost(xw, frame) + params.eps * float(np.sum(beta(-c, params.nu)))


def terminal_cost(xwL, box: FinalBox, params: BarrierParams) -> float:
    cf = eval_final_constraints(xwL, box)
    return params.eps_f * float(np.sum(beta(-cf, params.nu_f)))


def terminal_derivatives(xwL, box: FinalBox, params: BarrierParams):
    """Value, gradient and (diagonal) Hessian of :func:`terminal_cost`."""
    xwL = np.asarray(xwL, dtype=float)
    span = box.hi - box.lo
    z = (2.0 * xwL - (box.hi + box.lo)) / span
    cf = z * z - 1.0
    dc = 4.0 * z / span
    d2c = 8.0 / span ** 2
    d1, d2 = beta_derivatives(-cf, params.nu_f)
    val = params.eps_f * float(np.sum(beta(-cf, params.nu_f)))
    grad = params.eps_f * (-d1 * dc)
    hess = np.diag(params.eps_f * (d2 * dc * dc - d1 * d2c))
    return val, grad, hess


def running_cost_derivatives(X, frames):
    """Running cost on many nodes with gradient and Hessian over the 8 states.

    Returns ``(l, g, H_exact, H_gn)``; the Gauss-Newton form drops the
    indefinite ``w1``-``v`` coupling.
    """
    X = np.atleast_2d(X)
    t = frames[:, 0:3]
    k = frames[:, 9]
    tv = np.einsum("ij,ij->i", t, X[:, 2:5])
    if np.any(tv <= 0):
        raise TransverseDomainError("tangential velocity t'v must be positive")
    a = 1.0 - k * X[:, 0]
    l = a / tv
    n = X.shape[0]
    g = np.zeros((n, 8))
    g[:, 0] = -k / tv
    g[:, 2:5] = -(a / tv ** 2)[:, None] * t
    H = np.zeros((n, 8, 8))
    vv = (2.0 * a / tv ** 3)[:, None, None] * t[:, :, None] * t[:, None, :]
    H[:, 2:5, 2:5] = vv
    Hgn = H.copy()
    cross = (k / tv ** 2)[:, None] * t
    H[:, 0, 2:5] = cross
    H[:, 2:5, 0] = cross
    return l, g, H, Hgn


def stage_derivatives(xw, u, frame: FrenetFrame, bounds: InputStateBounds,
                      corridor: CorridorSpec, s: float, params: BarrierParams,
                      gauss_newton: bool = False):
    """Gradient and Hessian over ``[xw, u]`` of the augmented stage cost at ``s``."""
    xw = np.asarray(xw, dtype=float)
    u = np.asarray(u, dtype=float)
    # single node: sample the bound profiles at s
    grid = np.array([s])

    def at(p):
        return BoundProfile(grid, np.array([p(s)]))

    b1 = replace(bounds, phi_max=at(bounds.phi_max), theta_max=at(bounds.theta_max),
                 psi_max=at(bounds.psi_max))
    if corridor.kind == "circular":
        c1 = replace(corridor, r_obs=at(corridor.r_obs))
    else:
        c1 = replace(corridor, w1_min=at(corridor.w1_min), w1_max=at(corridor.w1_max),
                     w2_min=at(corridor.w2_min), w2_max=at(corridor.w2_max))
    sc = StageConstraints(b1, c1, 1)
    X, U = xw[None, :], u[None, :]
    c = sc.values(X, U)
    d1, d2 = beta_derivatives(-c, params.nu)
    gb, hb = sc.barrier_terms(X, U, d1, d2)
    _, gl, Hl, Hgn = running_cost_derivatives(X, frame.as_row()[None, :])
    grad = params.eps * gb[0]
    grad[:8] += gl[0]
    hess = params.eps * hb[0]
    hess[:8, :8] += Hgn[0] if gauss_newton else Hl[0]
    if gauss_newton:
        hess = hess + GN_REGULARIZATION * np.eye(12)
    return grad, hess
