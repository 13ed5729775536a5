"""Position, state and input constraints in transverse coordinates.

Every constraint is written in normalized quadratic form ``c <= 0`` with
``c = -1`` at the center of the admissible interval and ``c = 0`` on its
boundary.  Stage constraints are stacked in the order given by
:data:`STAGE_CONSTRAINT_NAMES`, followed by the corridor entries
(``"corridor"`` for circular sections, ``"w1"`` and ``"w2"`` for
rectangular ones).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .errors import CorridorError, InfeasibleCorridorError
from .framepath import FramePath, project_point, project_points, transverse_coords

STAGE_CONSTRAINT_NAMES = ("p", "q", "r", "F", "phi", "theta", "psi")
UNIQUENESS_FACTOR = 0.95


@dataclass(frozen=True)
class BoundProfile:
    """Bound values sampled on the path node grid."""

    s: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if s.shape != v.shape or s.ndim != 1:
            raise CorridorError("bound profile arrays must be 1-D and of equal length")
        if not np.all(np.isfinite(v)):
            raise CorridorError("bound profile contains non-finite values")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "values", v)

    def __call__(self, s):
        return np.interp(s, self.s, self.values)

    @classmethod
    def constant(cls, s, value: float) -> "BoundProfile":
        s = np.asarray(s, dtype=float)
        return cls(s, np.full_like(s, float(value)))

    def __neg__(self):
        return BoundProfile(self.s, -self.values)


def sigmoid_bound(s, s_mid: float, width: float, hi: float, lo: float,
                  s_back: Optional[float] = None) -> BoundProfile:
    """Smooth step from ``hi`` down to ``lo`` at ``s_mid`` (and back up at ``s_back``)."""
    if not hi > lo > 0:
        raise CorridorError("sigmoid bound requires hi > lo > 0")
    s = np.asarray(s, dtype=float)
    step = 0.5 * (1.0 + np.tanh((s - s_mid) / (2.0 * width)))
    if s_back is not None:
        step = step - 0.5 * (1.0 + np.tanh((s - s_back) / (2.0 * width)))
    return BoundProfile(s, hi - (hi - lo) * step)


@dataclass(frozen=True)
class CorridorSpec:
    """Circular (``r_obs``) or rectangular (``w1_min`` ... ``w2_max``) sections."""

    kind: str
    r_obs: Optional[BoundProfile] = None
    w1_min: Optional[BoundProfile] = None
    w1_max: Optional[BoundProfile] = None
    w2_min: Optional[BoundProfile] = None
    w2_max: Optional[BoundProfile] = None

    @classmethod
    def circular(cls, r_obs: BoundProfile) -> "CorridorSpec":
        return cls("circular", r_obs=r_obs)

    @classmethod
    def rectangular(cls, w1_min, w1_max, w2_min, w2_max) -> "CorridorSpec":
        return cls("rectangular", w1_min=w1_min, w1_max=w1_max,
                   w2_min=w2_min, w2_max=w2_max)

    @property
    def n_constraints(self) -> int:
        return 1 if self.kind == "circular" else 2

    @property
    def names(self) -> tuple:
        return ("corridor",) if self.kind == "circular" else ("w1", "w2")

    def validate(self, path: Optional[FramePath] = None, min_clearance: float = 1e-3) -> None:
        if self.kind == "circular":
            if self.r_obs is None:
                raise CorridorError("circular corridor needs r_obs")
            if np.any(self.r_obs.values <= 0):
                raise CorridorError("r_obs must be positive")
            extent = np.max(self.r_obs.values)
        elif self.kind == "rectangular":
            for name in ("w1_min", "w1_max", "w2_min", "w2_max"):
                if getattr(self, name) is None:
                    raise CorridorError(f"rectangular corridor needs {name}")
            for i in (1, 2):
                lo = getattr(self, f"w{i}_min").values
                hi = getattr(self, f"w{i}_max").values
                gap = hi - lo
                if np.any(gap < min_clearance):
                    bad = np.flatnonzero(gap < min_clearance)
                    s = getattr(self, f"w{i}_min").s
                    raise InfeasibleCorridorError(
                        f"w{i} bounds closer than {min_clearance} m on "
                        f"s in [{s[bad[0]]:.4f}, {s[bad[-1]]:.4f}]")
            extent = max(np.max(np.abs(getattr(self, n).values))
                         for n in ("w1_min", "w1_max", "w2_min", "w2_max"))
        else:
            raise CorridorError(f"unknown corridor kind {self.kind!r}")
        if path is not None:
            limit = UNIQUENESS_FACTOR * path.capture_radius
            if extent > limit:
                raise CorridorError(
                    f"corridor extends {extent:.4g} m from the path, more than "
                    f"{UNIQUENESS_FACTOR}/max curvature = {limit:.4g} m")
            if self.kind == "circular":
                s_ref = self.r_obs.s
            else:
                s_ref = self.w1_min.s
            if s_ref.size != path.n_nodes or abs(s_ref[-1] - path.length) > 1e-9:
                raise CorridorError("corridor profiles must be sampled on the path grid")
            bad = path.self_clearance_violations(extent) if np.isfinite(extent) else []
            if bad:
                raise CorridorError(
                    f"path comes back within {extent:.3g} m of itself "
                    f"(s = {bad[0][0]:.3f} and {bad[0][1]:.3f})")

    def geometric_inside(self, i: int, w1: float, w2: float) -> bool:
        """Point-in-section test at node ``i`` (used as an oracle in tests)."""
        if self.kind == "circular":
            return bool(np.hypot(w1, w2) <= self.r_obs.values[i])
        return bool(self.w1_min.values[i] <= w1 <= self.w1_max.values[i]
                    and self.w2_min.values[i] <= w2 <= self.w2_max.values[i])


@dataclass(frozen=True)
class InputStateBounds:
    """Symmetric rate bounds (rad/s), thrust interval (N), angle profiles (rad)."""

    p_max: float
    q_max: float
    r_max: float
    F_min: float
    F_max: float
    phi_max: BoundProfile
    theta_max: BoundProfile
    psi_max: BoundProfile

    def __post_init__(self):
        for name in ("p_max", "q_max", "r_max"):
            if not getattr(self, name) > 0:
                raise CorridorError(f"{name} must be positive")
        if not 0 < self.F_min < self.F_max:
            raise CorridorError("thrust bounds must satisfy 0 < F_min < F_max")
        for name in ("phi_max", "theta_max", "psi_max"):
            if np.any(getattr(self, name).values <= 0):
                raise CorridorError(f"{name} must be positive")


@dataclass(frozen=True)
class FinalBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (8,) or hi.shape != (8,):
            raise CorridorError("final box needs 8 lower and 8 upper bounds")
        if np.any(lo >= hi):
            raise CorridorError("final box requires lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def around(cls, center, tol) -> "FinalBox":
        center = np.asarray(center, dtype=float)
        tol = np.broadcast_to(np.asarray(tol, dtype=float), center.shape)
        return cls(center - tol, center + tol)

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)


# --------------------------------------------------------------------------
# scalar evaluations
# --------------------------------------------------------------------------

def eval_circular(w1: float, w2: float, r_obs: float) -> float:
    return (w1 * w1 + w2 * w2) / (r_obs * r_obs) - 1.0


def eval_rect(wi: float, wmin: float, wmax: float) -> float:
    z = (2.0 * wi - (wmax + wmin)) / (wmax - wmin)
    return z * z - 1.0


def eval_stage_constraints(xw, u, bounds: InputStateBounds, corridor: CorridorSpec,
                           s: float) -> np.ndarray:
    """Stacked stage constraints at arc length ``s``; see module docstring for order."""
    xw = np.asarray(xw, dtype=float)
    u = np.asarray(u, dtype=float)
    c = [
        (u[0] / bounds.p_max) ** 2 - 1.0,
        (u[1] / bounds.q_max) ** 2 - 1.0,
        (u[2] / bounds.r_max) ** 2 - 1.0,
        eval_rect(u[3], bounds.F_min, bounds.F_max),
        (xw[5] / bounds.phi_max(s)) ** 2 - 1.0,
        (xw[6] / bounds.theta_max(s)) ** 2 - 1.0,
        (xw[7] / bounds.psi_max(s)) ** 2 - 1.0,
    ]
    if corridor.kind == "circular":
        c.append(eval_circular(xw[0], xw[1], corridor.r_obs(s)))
    else:
        c.append(eval_rect(xw[0], corridor.w1_min(s), corridor.w1_max(s)))
        c.append(eval_rect(xw[1], corridor.w2_min(s), corridor.w2_max(s)))
    return np.array(c)


def eval_final_constraints(xwL, box: FinalBox) -> np.ndarray:
    xwL = np.asarray(xwL, dtype=float)
    z = (2.0 * xwL - (box.hi + box.lo)) / (box.hi - box.lo)
    return z * z - 1.0


# --------------------------------------------------------------------------
# node-grid evaluation with derivatives
# --------------------------------------------------------------------------

class StageConstraints:
    """All stage constraints on the node grid, with first and second derivatives.

    Each box-type entry is ``(a z_i + b)^2 - 1`` for a single variable ``z_i`` of
    ``z = [xw, u]``; the circular corridor entry couples ``w1`` and ``w2``.
    """

    def __init__(self, bounds: InputStateBounds, corridor: CorridorSpec, n_nodes: int):
        n = n_nodes
        idx, a, b = [], [], []

        def add(i, scale, offset):
            idx.append(i)
            a.append(np.broadcast_to(np.asarray(scale, float), (n,)))
            b.append(np.broadcast_to(np.asarray(offset, float), (n,)))

        add(8, 1.0 / bounds.p_max, 0.0)
        add(9, 1.0 / bounds.q_max, 0.0)
        add(10, 1.0 / bounds.r_max, 0.0)
        span = bounds.F_max - bounds.F_min
        add(11, 2.0 / span, -(bounds.F_max + bounds.F_min) / span)
        for i, prof in ((5, bounds.phi_max), (6, bounds.theta_max), (7, bounds.psi_max)):
            if prof.values.size != n:
                raise CorridorError("angle bound profiles must be sampled on the path grid")
            add(i, 1.0 / prof.values, 0.0)
        self.circular = corridor.kind == "circular"
        if self.circular:
            self.r = np.asarray(corridor.r_obs.values, float)
        else:
            for i, lo, hi in ((0, corridor.w1_min, corridor.w1_max),
                              (1, corridor.w2_min, corridor.w2_max)):
                span = hi.values - lo.values
                add(i, 2.0 / span, -(hi.values + lo.values) / span)
        self.idx = np.array(idx)
        self.a = np.column_stack(a)
        self.b = np.column_stack(b)
        self.names = STAGE_CONSTRAINT_NAMES + corridor.names
        self.n_constraints = len(self.names)

    def values(self, X, U, sel=slice(None)) -> np.ndarray:
        Z = np.hstack((X, U))
        lin = self.a[sel] * Z[:, self.idx] + self.b[sel]
        c = lin * lin - 1.0
        if self.circular:
            cc = (X[:, 0] ** 2 + X[:, 1] ** 2) / self.r[sel] ** 2 - 1.0
            c = np.column_stack((c, cc))
        return c

    def barrier_terms(self, X, U, dbeta, d2beta):
        """Gradient and Hessian (over ``z``) of ``sum_j phi(-c_j)``.

        ``dbeta`` and ``d2beta`` are the first and second derivatives of the
        scalar barrier evaluated at ``-c``, shape ``(n, n_constraints)``.
        """
        n = X.shape[0]
        Z = np.hstack((X, U))
        grad = np.zeros((n, 12))
        hess = np.zeros((n, 12, 12))
        nb = self.idx.size
        lin = self.a * Z[:, self.idx] + self.b
        dc = 2.0 * self.a * lin
        d2c = 2.0 * self.a * self.a
        rows = np.arange(n)
        for j in range(nb):
            i = self.idx[j]
            grad[:, i] += -dbeta[:, j] * dc[:, j]
            hess[rows, i, i] += d2beta[:, j] * dc[:, j] ** 2 - dbeta[:, j] * d2c[:, j]
        if self.circular:
            j = nb
            r2 = self.r ** 2
            g = np.column_stack((2 * X[:, 0] / r2, 2 * X[:, 1] / r2))
            grad[:, 0:2] += -dbeta[:, j, None] * g
            hess[:, 0:2, 0:2] += d2beta[:, j, None, None] * g[:, :, None] * g[:, None, :]
            hess[:, 0, 0] += -dbeta[:, j] * 2 / r2
            hess[:, 1, 1] += -dbeta[:, j] * 2 / r2
        return grad, hess


# --------------------------------------------------------------------------
# obstacles
# --------------------------------------------------------------------------

def map_obstacle_point(path: FramePath, p_obs, s_hint=None):
    """``(s_obs, w1_obs, w2_obs)`` of an obstacle boundary point."""
    s = project_point(path, p_obs, s_hint=s_hint)
    w1, w2 = transverse_coords(path, s, p_obs, tol=1e-7)
    return s, w1, w2


def map_obstacle_points(path: FramePath, points) -> np.ndarray:
    """Batch version of :func:`map_obstacle_point`, rows ``(s, w1, w2)``."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    s = project_points(path, P)
    out = np.empty((P.shape[0], 3))
    out[:, 0] = s
    for j, (sj, p) in enumerate(zip(s, P)):
        fr = path.frame_at(sj)
        d = p - path.position_at(sj)
        out[j, 1] = fr.n @ d
        out[j, 2] = fr.b @ d
    return out


_SELECTORS = {
    "w1_min": (1, "min"), "w1_max": (1, "max"),
    "w2_min": (2, "min"), "w2_max": (2, "max"),
}


def restrict_bounds(corridor: CorridorSpec, obstacle_points, path: FramePath,
                    affected: str, window: int = 5, min_clearance: float = 1e-3,
                    inflate: float = 0.0) -> CorridorSpec:
    """Tighten one rectangular bound with the transverse image of an obstacle cloud.

    Each point moves the selected bound at its nearest node (``max`` for lower
    bounds, ``min`` for upper bounds).  The obstacle envelope is spread over
    ``window`` nodes toward the restrictive side and pushed ``inflate`` metres
    away from the obstacle before it is merged, so the operation is monotone
    and idempotent.
    """
    if inflate < 0:
        raise CorridorError("inflation margin must be nonnegative")
    if corridor.kind != "rectangular":
        raise CorridorError("obstacle shaping needs a rectangular corridor")
    if affected not in _SELECTORS:
        raise CorridorError(f"unknown bound selector {affected!r}")
    pts = np.asarray(obstacle_points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        return corridor
    comp, side = _SELECTORS[affected]
    mapped = map_obstacle_points(path, pts)
    nodes = np.clip(np.rint(mapped[:, 0] / path.ds).astype(int), 0, path.n_nodes - 1)
    wv = mapped[:, comp]
    prof = getattr(corridor, affected)
    if side == "min":
        env = np.full(path.n_nodes, -np.inf)
        np.maximum.at(env, nodes, wv)
        if window > 1:
            env = maximum_filter1d(env, window, mode="nearest")
        new = np.maximum(prof.values, env + inflate)
    else:
        env = np.full(path.n_nodes, np.inf)
        np.minimum.at(env, nodes, wv)
        if window > 1:
            env = minimum_filter1d(env, window, mode="nearest")
        new = np.minimum(prof.values, env - inflate)
    out = replace(corridor, **{affected: BoundProfile(prof.s, new)})
    other = getattr(out, f"w{comp}_max" if side == "min" else f"w{comp}_min").values
    gap = (other - new) if side == "min" else (new - other)
    if np.any(gap < min_clearance):
        bad = np.flatnonzero(gap < min_clearance)
        raise InfeasibleCorridorError(
            f"obstacle closes the corridor on s in [{prof.s[bad[0]]:.4f}, "
            f"{prof.s[bad[-1]]:.4f}]")
    out.validate(min_clearance=min_clearance)
    return out


def load_obstacle_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"x", "y", "z"} <= set(rows[0]):
        raise CorridorError(f"{path}: expected CSV columns x, y, z")
    return np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])


def write_obstacle_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"])
        for p in np.asarray(points, dtype=float):
            w.writerow([repr(float(c)) for c in p])


def box_surface_points(lo, hi, spacing: float = 0.05) -> np.ndarray:
    """Points on the faces of an axis-aligned box, roughly ``spacing`` apart."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (3,) or np.any(hi <= lo):
        raise CorridorError("box needs 3-vectors with lo < hi")
    axes = [np.linspace(lo[i], hi[i], max(2, int(np.ceil((hi[i] - lo[i]) / spacing)) + 1))
            for i in range(3)]
    pts = []
    for i in range(3):
        j, k = [a for a in range(3) if a != i]
        A, B = np.meshgrid(axes[j], axes[k], indexing="ij")
        for v in (lo[i], hi[i]):
            face = np.empty((A.size, 3))
            face[:, i] = v
            face[:, j] = A.ravel()
            face[:, k] = B.ravel()
            pts.append(face)
    return np.unique(np.vstack(pts), axis=0)


def cylinder_surface_points(base, axis, radius: float, length: float,
                            spacing: float = 0.05) -> np.ndarray:
    """Points on the lateral surface and caps of a finite cylinder."""
    base = np.asarray(base, dtype=float)
    a = np.asarray(axis, dtype=float)
    if not (radius > 0 and length > 0) or np.linalg.norm(a) == 0:
        raise CorridorError("cylinder needs a positive radius, length and axis")
    a = a / np.linalg.norm(a)
    e1 = np.cross(a, [1.0, 0.0, 0.0] if abs(a[0]) < 0.9 else [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    th = np.linspace(0.0, 2 * np.pi, max(8, int(np.ceil(2 * np.pi * radius / spacing))),
                     endpoint=False)
    h = np.linspace(0.0, length, max(2, int(np.ceil(length / spacing)) + 1))
    ring = np.cos(th)[:, None] * e1 + np.sin(th)[:, None] * e2
    side = base + (h[:, None, None] * a + radius * ring[None]).reshape(-1, 3)
    rr = np.linspace(0.0, radius, max(2, int(np.ceil(radius / spacing)) + 1))[1:]
    disk = (rr[:, None, None] * ring[None]).reshape(-1, 3)
    caps = np.vstack((base, base + disk, base + length * a, base + length * a + disk))
    return np.vstack((side, caps))
