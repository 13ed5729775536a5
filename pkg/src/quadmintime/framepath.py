"""Arc-length parameterized frame paths and transverse coordinates.

A :class:`FramePath` stores the curve on a half-step grid (``ds / 2``) so that
RK4 integration on the ``ds`` grid finds the frame at every stage point
without interpolation.  Node ``i`` of the solver grid is half-grid sample
``2 * i``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import (
    InconsistentProjectionError,
    OutOfDomainError,
    OutOfTubeError,
    PathError,
    ProjectionAmbiguityError,
)

DEFAULT_DS = 1e-3

# frame row layout used by the numerical kernels
FRAME_T = slice(0, 3)
FRAME_N = slice(3, 6)
FRAME_B = slice(6, 9)
FRAME_K = 9
FRAME_TAU = 10
FRAME_WIDTH = 11


# --------------------------------------------------------------------------
# curvature profiles
# --------------------------------------------------------------------------

def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class CurvatureProfile:
    """Curvature as a function of arc length.

    ``func`` maps an array of arc lengths to curvature values in 1/m.
    ``s_max`` is the largest arc length the profile is defined for.
    """

    func: Callable[[np.ndarray], np.ndarray]
    s_max: float
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return np.asarray(self.func(s), dtype=float)

    @classmethod
    def constant(cls, k: float, s_max: float = np.inf) -> "CurvatureProfile":
        return cls(lambda s: np.full_like(s, float(k)), s_max, "constant", {"k": k})

    @classmethod
    def tanh_bump(cls, peak: float, s_on: float, s_off: float,
                  s_max: float = np.inf, steepness: float = 1.0) -> "CurvatureProfile":
        """``peak * (tanh(a(s-s_on)) - tanh(a(s-s_off))) / max(...)``."""
        mid = 0.5 * (s_on + s_off)
        norm = np.tanh(steepness * (mid - s_on)) - np.tanh(steepness * (mid - s_off))

        def func(s):
            return peak * (np.tanh(steepness * (s - s_on))
                           - np.tanh(steepness * (s - s_off))) / norm

        return cls(func, s_max, "tanh_bump",
                   {"peak": peak, "s_on": s_on, "s_off": s_off, "steepness": steepness})

    @classmethod
    def sigmoid_bump(cls, peak: float, s_on: float, s_off: float,
                     steepness: float, s_max: float = np.inf) -> "CurvatureProfile":
        """Difference of two logistic steps, normalized to ``peak`` at the midpoint."""
        mid = 0.5 * (s_on + s_off)
        norm = _logistic(steepness * (mid - s_on)) - _logistic(steepness * (mid - s_off))

        def func(s):
            return peak * (_logistic(steepness * (s - s_on))
                           - _logistic(steepness * (s - s_off))) / norm

        return cls(func, s_max, "sigmoid_bump",
                   {"peak": peak, "s_on": s_on, "s_off": s_off, "steepness": steepness})

    @classmethod
    def from_samples(cls, s, k) -> "CurvatureProfile":
        s = np.asarray(s, dtype=float)
        k = np.asarray(k, dtype=float)
        if s.ndim != 1 or s.shape != k.shape or s.size < 2:
            raise PathError("curvature samples must be two 1-D arrays of equal length")
        if not np.all(np.diff(s) > 0):
            raise PathError("curvature sample abscissae must be strictly increasing")
        if abs(s[0]) > 1e-12:
            raise PathError("curvature samples must start at s = 0")
        if not np.all(np.isfinite(k)):
            raise PathError("curvature samples must be finite")
        return cls(lambda x: np.interp(x, s, k), float(s[-1]), "samples",
                   {"s": s, "k": k})

    @classmethod
    def from_csv(cls, path) -> "CurvatureProfile":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or "s" not in rows[0] or "k" not in rows[0]:
            raise PathError(f"{path}: expected CSV columns 's' and 'k'")
        s = [float(r["s"]) for r in rows]
        k = [float(r["k"]) for r in rows]
        return cls.from_samples(s, k)

    def validate(self, length: float, ds: float, lipschitz: float = 200.0) -> None:
        """Check domain coverage, finiteness and continuity on the ``ds`` grid."""
        if self.s_max < length - 1e-9:
            raise PathError(
                f"curvature profile covers [0, {self.s_max}] but the path length is {length}")
        n = int(round(length / ds))
        s = np.linspace(0.0, length, n + 1)
        k = self(s)
        if not np.all(np.isfinite(k)):
            raise PathError("curvature profile is not finite on [0, L]")
        jump = np.max(np.abs(np.diff(k))) if k.size > 1 else 0.0
        if jump > lipschitz * ds:
            raise PathError(
                f"curvature jumps by {jump:.3g} between samples (limit {lipschitz * ds:.3g})")


# --------------------------------------------------------------------------
# frames and paths
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FrenetFrame:
    t: np.ndarray
    n: np.ndarray
    b: np.ndarray
    k: float
    tau: float

    @property
    def rotation(self) -> np.ndarray:
        """``R_SF = [t n b]``, Serret-Frenet to inertial components."""
        return np.column_stack((self.t, self.n, self.b))

    def as_row(self) -> np.ndarray:
        return np.concatenate((self.t, self.n, self.b, [self.k, self.tau]))


class FramePath:
    """Sampled frame path.  Immutable after construction."""

    def __init__(self, ds, points, t, n, b, k, tau):
        self.ds = float(ds)
        self._points = np.ascontiguousarray(points, dtype=float)
        self._t = np.ascontiguousarray(t, dtype=float)
        self._n = np.ascontiguousarray(n, dtype=float)
        self._b = np.ascontiguousarray(b, dtype=float)
        self._k = np.ascontiguousarray(k, dtype=float)
        self._tau = np.ascontiguousarray(tau, dtype=float)
        m = self._points.shape[0]
        if m < 3 or m % 2 == 0:
            raise PathError("half-grid sample count must be odd and at least 3")
        self.n_nodes = (m - 1) // 2 + 1
        self.length = self.ds * (self.n_nodes - 1)
        self.s_half = np.linspace(0.0, self.length, m)
        self.s = self.s_half[::2].copy()
        for arr in (self._points, self._t, self._n, self._b, self._k, self._tau):
            arr.flags.writeable = False
        self._frames = np.column_stack(
            (self._t, self._n, self._b, self._k, self._tau))
        self._frames.flags.writeable = False
        kmax = float(np.max(np.abs(self._k)))
        self.max_curvature = kmax
        self.capture_radius = np.inf if kmax == 0.0 else 1.0 / kmax
        self._tree = None
        self._rot = None

    # node-aligned views
    @property
    def points(self) -> np.ndarray:
        return self._points[::2]

    @property
    def tangents(self) -> np.ndarray:
        return self._t[::2]

    @property
    def normals(self) -> np.ndarray:
        return self._n[::2]

    @property
    def binormals(self) -> np.ndarray:
        return self._b[::2]

    @property
    def curvature(self) -> np.ndarray:
        return self._k[::2]

    @property
    def torsion(self) -> np.ndarray:
        return self._tau[::2]

    @property
    def frames_half(self) -> np.ndarray:
        """Frame rows ``[t, n, b, k, tau]`` on the half grid, shape ``(2N+1, 11)``."""
        return self._frames

    @property
    def frames(self) -> np.ndarray:
        return self._frames[::2]

    @property
    def points_half(self) -> np.ndarray:
        return self._points

    def frame(self, i: int) -> FrenetFrame:
        """Stored frame at node ``i``."""
        j = 2 * i
        return FrenetFrame(self._t[j].copy(), self._n[j].copy(), self._b[j].copy(),
                           float(self._k[j]), float(self._tau[j]))

    # ------------------------------------------------------------------
    def _check_s(self, s):
        if not (-1e-12 <= s <= self.length + 1e-12):
            raise OutOfDomainError(f"s = {s} outside [0, {self.length}]")
        return min(max(float(s), 0.0), self.length)

    def _locate(self, s):
        h = 0.5 * self.ds
        j = int(np.floor(s / h))
        j = min(max(j, 0), self._points.shape[0] - 2)
        return j, (s - self.s_half[j]) / h

    def position_at(self, s: float) -> np.ndarray:
        """Cubic Hermite interpolation of the path points using the tangents."""
        s = self._check_s(s)
        j, u = self._locate(s)
        h = 0.5 * self.ds
        p0, p1 = self._points[j], self._points[j + 1]
        m0, m1 = self._t[j] * h, self._t[j + 1] * h
        u2, u3 = u * u, u * u * u
        return ((2 * u3 - 3 * u2 + 1) * p0 + (u3 - 2 * u2 + u) * m0
                + (-2 * u3 + 3 * u2) * p1 + (u3 - u2) * m1)

    def _rotations(self):
        if self._rot is None:
            mats = np.stack((self._t, self._n, self._b), axis=2)
            self._rot = Rotation.from_matrix(mats)
        return self._rot

    def frame_at(self, s: float) -> FrenetFrame:
        return frenet_at(self, s)

    def kdtree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self._points)
        return self._tree

    def self_clearance_violations(self, radius: float) -> list:
        """Node pairs closer than ``radius`` yet farther apart than ``2 radius`` in s."""
        pts = self.points
        tree = cKDTree(pts)
        pairs = tree.query_pairs(radius, output_type="ndarray")
        if pairs.size == 0:
            return []
        gap = np.abs(pairs[:, 0] - pairs[:, 1]) * self.ds
        bad = pairs[gap > 2.0 * radius]
        return [(float(self.s[i]), float(self.s[j])) for i, j in bad]


def _orthonormal_check(t0, binormal):
    t0 = np.asarray(t0, dtype=float)
    b = np.asarray(binormal, dtype=float)
    if t0.shape != (3,) or b.shape != (3,):
        raise PathError("t0 and binormal must be 3-vectors")
    if abs(np.linalg.norm(t0) - 1.0) > 1e-9 or abs(np.linalg.norm(b) - 1.0) > 1e-9:
        raise PathError("t0 and binormal must be unit vectors")
    if abs(t0 @ b) > 1e-9:
        raise PathError("t0 must be orthogonal to the binormal")
    return t0, b


def _half_grid(length, ds):
    if length <= 0 or ds <= 0:
        raise PathError("length and ds must be positive")
    n = int(round(length / ds))
    if n < 1 or abs(n * ds - length) > 1e-9 * max(1.0, length):
        raise PathError(f"length {length} is not a multiple of ds {ds}")
    return n, np.linspace(0.0, n * ds, 2 * n + 1)


def build_planar_path(profile: CurvatureProfile, binormal, p0, t0, length: float,
                      ds: float = DEFAULT_DS, lipschitz: float = 200.0) -> FramePath:
    """Planar path with a constant binormal and signed curvature.

    The heading angle is the integral of the curvature (Simpson rule on each
    half step); positions are the exact chords of constant-curvature arcs.
    """
    t0, b = _orthonormal_check(t0, binormal)
    p0 = np.asarray(p0, dtype=float)
    profile.validate(length, ds, lipschitz)
    _, sh = _half_grid(length, ds)
    h = sh[1] - sh[0]
    k = profile(sh)
    kq = profile(0.5 * (sh[:-1] + sh[1:]))
    dtheta = h / 6.0 * (k[:-1] + 4.0 * kq + k[1:])
    theta = np.concatenate(([0.0], np.cumsum(dtheta)))

    e1 = t0
    e2 = np.cross(b, t0)
    c, sn = np.cos(theta), np.sin(theta)
    t = c[:, None] * e1 + sn[:, None] * e2
    n = -sn[:, None] * e1 + c[:, None] * e2
    bb = np.broadcast_to(b, t.shape)

    mid = 0.5 * (theta[:-1] + theta[1:])
    chord = h * np.sinc(dtheta / (2.0 * np.pi))
    steps = chord[:, None] * (np.cos(mid)[:, None] * e1 + np.sin(mid)[:, None] * e2)
    points = p0 + np.vstack((np.zeros(3), np.cumsum(steps, axis=0)))
    return FramePath(ds, points, t, n, bb, k, np.zeros_like(k))


def build_path_3d(curvature: CurvatureProfile, torsion: Optional[CurvatureProfile],
                  p0, t0, n0, length: float, ds: float = DEFAULT_DS) -> FramePath:
    """General path obtained by RK4 integration of the Serret-Frenet equations."""
    t0 = np.asarray(t0, dtype=float)
    n0 = np.asarray(n0, dtype=float)
    if abs(np.linalg.norm(t0) - 1) > 1e-9 or abs(np.linalg.norm(n0) - 1) > 1e-9 \
            or abs(t0 @ n0) > 1e-9:
        raise PathError("t0 and n0 must be orthonormal")
    curvature.validate(length, ds)
    if torsion is None:
        torsion = CurvatureProfile.constant(0.0)
    elif torsion.s_max < length - 1e-9:
        raise PathError("torsion profile shorter than the path")
    _, sh = _half_grid(length, ds)
    h = sh[1] - sh[0]
    m = sh.size

    def rhs(s, R):
        kk = float(curvature(np.array([s]))[0])
        tt = float(torsion(np.array([s]))[0])
        om = np.array([[0.0, -kk, 0.0], [kk, 0.0, -tt], [0.0, tt, 0.0]])
        return R @ om

    R = np.column_stack((t0, n0, np.cross(t0, n0)))
    p = np.asarray(p0, dtype=float).copy()
    points = np.empty((m, 3))
    frames = np.empty((m, 3, 3))
    points[0], frames[0] = p, R
    for i in range(m - 1):
        s = sh[i]
        k1 = rhs(s, R)
        k2 = rhs(s + h / 2, R + h / 2 * k1)
        k3 = rhs(s + h / 2, R + h / 2 * k2)
        k4 = rhs(s + h, R + h * k3)
        # position uses the same stages: p' = R e1
        p = p + h / 6 * (R[:, 0] + 2 * (R + h / 2 * k1)[:, 0]
                         + 2 * (R + h / 2 * k2)[:, 0] + (R + h * k3)[:, 0])
        R = R + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        points[i + 1], frames[i + 1] = p, R
    return FramePath(ds, points, frames[:, :, 0], frames[:, :, 1], frames[:, :, 2],
                     curvature(sh), torsion(sh))


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def frenet_at(path: FramePath, s: float) -> FrenetFrame:
    """Frame at arbitrary ``s`` between two samples.

    Spherical-linear interpolation plus a quadratic correction of the rotation
    vector, so the frame turns at the linearly interpolated rate
    ``(tau, 0, k)`` (body axes) and still hits both samples exactly.  Plain
    slerp would turn at the interval-average rate, inconsistent with the
    reported curvature by ``k' ds / 4``.
    """
    s = path._check_s(s)
    j, u = path._locate(s)
    k = (1 - u) * path._k[j] + u * path._k[j + 1]
    tau = (1 - u) * path._tau[j] + u * path._tau[j + 1]
    if u == 0.0:
        return FrenetFrame(path._t[j].copy(), path._n[j].copy(), path._b[j].copy(),
                           float(k), float(tau))
    rots = path._rotations()
    r0 = rots[j]
    rel = (r0.inv() * rots[j + 1]).as_rotvec()
    dw = np.array([path._tau[j + 1] - path._tau[j], 0.0, path._k[j + 1] - path._k[j]])
    rv = u * rel + 0.25 * path.ds * (u * u - u) * dw
    R = (r0 * Rotation.from_rotvec(rv)).as_matrix()
    return FrenetFrame(R[:, 0], R[:, 1], R[:, 2], float(k), float(tau))


def _refine(path, p, s):
    for _ in range(30):
        fr = frenet_at(path, s)
        d = p - path.position_at(s)
        along = fr.t @ d
        denom = 1.0 - fr.k * (fr.n @ d)
        if denom <= 1e-6:
            denom = 1.0
        s_new = min(max(s + along / denom, 0.0), path.length)
        if abs(s_new - s) < 1e-14 * max(1.0, path.length):
            s = s_new
            break
        s = s_new
    return s


def project_point(path: FramePath, p, s_hint: Optional[float] = None,
                  capture_radius: Optional[float] = None, window: Optional[float] = None,
                  ambiguity_tol: float = 1e-6) -> float:
    """Arc length of the closest path point to ``p``."""
    p = np.asarray(p, dtype=float)
    cap = path.capture_radius if capture_radius is None else capture_radius
    pts = path.points_half
    sh = path.s_half
    if s_hint is not None:
        w = window if window is not None else max(2.0 * min(cap, path.length), 10 * path.ds)
        lo = np.searchsorted(sh, s_hint - w)
        hi = np.searchsorted(sh, s_hint + w, side="right")
        idx = np.arange(lo, hi)
    else:
        idx = np.arange(sh.size)
    d = np.linalg.norm(pts[idx] - p, axis=1)
    # local minima of the sampled distance
    left = np.concatenate(([np.inf], d[:-1]))
    right = np.concatenate((d[1:], [np.inf]))
    cand = np.flatnonzero((d <= left) & (d <= right))
    best = cand[np.argmin(d[cand])]
    if d[best] >= cap:
        raise OutOfTubeError(
            f"point {p} is {d[best]:.4g} m from the path (capture radius {cap:.4g} m)")
    sep = max(2.0 * min(cap, path.length), 4 * path.ds)
    s_best = _refine(path, p, sh[idx[best]])
    dist_best = np.linalg.norm(p - path.position_at(s_best))
    for c in cand:
        if abs(sh[idx[c]] - s_best) <= sep or d[c] - dist_best > 10 * path.ds:
            continue
        s_c = _refine(path, p, sh[idx[c]])
        if abs(s_c - s_best) <= sep:
            continue
        dist_c = np.linalg.norm(p - path.position_at(s_c))
        if abs(dist_c - dist_best) <= ambiguity_tol:
            raise ProjectionAmbiguityError(
                f"point {p} is equidistant from s = {s_best:.6g} and s = {s_c:.6g}")
        if dist_c < dist_best:
            s_best, dist_best = s_c, dist_c
    return float(s_best)


def project_points(path: FramePath, points, capture_radius: Optional[float] = None):
    """Batch closest-point projection (nearest sample, then Newton refinement)."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    cap = path.capture_radius if capture_radius is None else capture_radius
    dist, idx = path.kdtree().query(P)
    if np.any(dist >= cap):
        i = int(np.argmax(dist))
        raise OutOfTubeError(
            f"point {P[i]} is {dist[i]:.4g} m from the path (capture radius {cap:.4g} m)")
    return np.array([_refine(path, p, path.s_half[i]) for p, i in zip(P, idx)])


def transverse_coords(path: FramePath, s_f: float, p, tol: float = 1e-8):
    """``(w1, w2)``: normal and binormal components of ``p - p_f(s_f)``."""
    fr = frenet_at(path, s_f)
    d = np.asarray(p, dtype=float) - path.position_at(s_f)
    along = fr.t @ d
    if abs(along) > tol:
        raise InconsistentProjectionError(
            f"tangent component {along:.3g} m: s_f = {s_f} is not the projection of p")
    return float(fr.n @ d), float(fr.b @ d)


def reconstruct_position(path: FramePath, s: float, w1: float, w2: float) -> np.ndarray:
    fr = frenet_at(path, s)
    return path.position_at(s) + w1 * fr.n + w2 * fr.b


def reconstruct_positions(path: FramePath, w1, w2) -> np.ndarray:
    """Node-aligned version of :func:`reconstruct_position`."""
    w1 = np.asarray(w1, dtype=float)[:, None]
    w2 = np.asarray(w2, dtype=float)[:, None]
    return path.points + w1 * path.normals + w2 * path.binormals


def frenet_residual(path: FramePath) -> float:
    """Max deviation of the finite-difference frame derivative from the Frenet ODE."""
    R = np.stack((path._t, path._n, path._b), axis=2)
    h = 0.5 * path.ds
    dR = (R[2:] - R[:-2]) / (2 * h)
    k = path._k[1:-1]
    tau = path._tau[1:-1]
    om = np.zeros((k.size, 3, 3))
    om[:, 1, 0] = k
    om[:, 0, 1] = -k
    om[:, 2, 1] = tau
    om[:, 1, 2] = -tau
    return float(np.max(np.abs(dR - R[1:-1] @ om)))


def arclength_speed_error(path: FramePath) -> float:
    """Max ``| ||p_f'|| - 1 |`` by central differences on the node grid."""
    p = path.points
    d = (p[2:] - p[:-2]) / (2 * path.ds)
    return float(np.max(np.abs(np.linalg.norm(d, axis=1) - 1.0)))


def load_profile_csv(path) -> CurvatureProfile:
    return CurvatureProfile.from_csv(Path(path))
