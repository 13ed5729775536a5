"""JSON scenario configuration: parsing, validation and object construction.

Schema (all lengths in m, times in s; see the shipped ``scenarios/*.json``)::

    name        str
    notes       optional free text, ignored
    path        profile {kind: constant|tanh_bump|sigmoid_bump|csv, ...},
                binormal, p0, t0, L, ds
    vehicle     m, g
    bounds      p_max, q_max, r_max, F_min, F_max, phi_max, theta_max, psi_max,
                rate_units (rad/s|deg/s), angle_units (rad|deg)
    corridor    kind circular: r_obs
                kind rectangular: w1_max, w2_max (and optionally w1_min, w2_min,
                default the negated upper bounds), obstacles [{file, affects,
                inflate}], window
    init        speed, yaw
    final_box   null or {tol: 8 values, velocity: frenet|world}
    solver      schedule {factor, eps_floor, nu_floor, eps_f_floor, nu_f_floor,
                max_outer}, tol, max_newton, pitch_margin,
                gain_weights {Q, R, P_L} (diagonals)

Bound profiles are a number, ``{"kind": "sigmoid", "hi", "lo", "s_mid",
"width", "s_back"}`` or ``{"kind": "csv", "file"}`` with columns ``s, value``.
Relative file names resolve against the config file's directory.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corridor import (
    BoundProfile,
    CorridorSpec,
    FinalBox,
    InputStateBounds,
    load_obstacle_csv,
    restrict_bounds,
    sigmoid_bound,
)
from .cost import BarrierParams, Schedule
from .dynamics import PITCH_MARGIN, VehicleParams
from .errors import ConfigError, QuadMintimeError
from .flatness import InitSpec, initial_state
from .framepath import CurvatureProfile, FramePath, build_planar_path
from .problem import TransverseProblem

DEFAULT_SOLVER = {"tol": None, "max_newton": 50, "pitch_margin": PITCH_MARGIN}


@dataclass
class ScenarioConfig:
    """Parsed config plus every object the pipeline needs."""

    name: str
    source: Optional[Path]
    raw: dict
    path: FramePath
    vehicle: VehicleParams
    bounds: InputStateBounds
    corridor: CorridorSpec
    init: InitSpec
    final_box: Optional[FinalBox]
    schedule: Schedule
    x0: np.ndarray
    tol: Optional[float] = None
    max_newton: int = 50
    pitch_margin: float = PITCH_MARGIN
    gain_weights: Optional[tuple] = None
    obstacles: dict = field(default_factory=dict)

    def problem(self) -> TransverseProblem:
        return TransverseProblem(self.path, self.vehicle, self.bounds, self.corridor, self.x0,
                                 self.final_box, self.gain_weights, self.pitch_margin)


# --------------------------------------------------------------------------
# field access with paths in error messages
# --------------------------------------------------------------------------

_MISSING = object()


class _Node:
    def __init__(self, data, where: str):
        if not isinstance(data, dict):
            raise ConfigError("expected an object", field=where or "<root>")
        self.data = data
        self.where = where

    def _f(self, key):
        return f"{self.where}.{key}" if self.where else key

    def has(self, key) -> bool:
        return self.data.get(key) is not None

    def get(self, key, default=_MISSING):
        if key not in self.data or self.data[key] is None:
            if default is _MISSING:
                raise ConfigError("required field is missing", field=self._f(key))
            return default
        return self.data[key]

    def node(self, key, default=_MISSING):
        v = self.get(key, default)
        return v if v is None else _Node(v, self._f(key))

    def num(self, key, default=_MISSING, positive=False) -> float:
        v = self.get(key, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
            raise ConfigError(f"expected a finite number, got {v!r}", field=self._f(key))
        if positive and not v > 0:
            raise ConfigError(f"must be positive, got {v!r}", field=self._f(key))
        return float(v)

    def vec(self, key, n, default=_MISSING) -> np.ndarray:
        v = self.get(key, default)
        if v is None:
            return None
        try:
            a = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("expected a list of numbers", field=self._f(key)) from None
        if a.shape != (n,) or not np.all(np.isfinite(a)):
            raise ConfigError(f"expected {n} finite numbers", field=self._f(key))
        return a

    def file(self, key, base: Path) -> Path:
        p = Path(self.get(key))
        p = p if p.is_absolute() else base / p
        if not p.is_file():
            raise ConfigError(f"referenced file {str(p)!r} does not exist", field=self._f(key))
        return p


def _guard(where: str, fn, *args, **kwargs):
    """Run a constructor, turning its validation errors into field-tagged errors."""
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (QuadMintimeError, ValueError) as exc:
        raise ConfigError(str(exc), field=where) from exc


# --------------------------------------------------------------------------
# blocks
# --------------------------------------------------------------------------

def _profile(node: _Node, length: float, base: Path) -> CurvatureProfile:
    kind = node.get("kind")
    if kind == "constant":
        return CurvatureProfile.constant(node.num("k"))
    if kind == "tanh_bump":
        return _guard(node.where, CurvatureProfile.tanh_bump, node.num("peak"), node.num("s_on"),
                      node.num("s_off"), s_max=length, steepness=node.num("steepness", 1.0))
    if kind == "sigmoid_bump":
        return _guard(node.where, CurvatureProfile.sigmoid_bump, node.num("peak"),
                      node.num("s_on"), node.num("s_off"), node.num("steepness", 1.0),
                      s_max=length)
    if kind == "csv":
        return _guard(node._f("file"), CurvatureProfile.from_csv, node.file("file", base))
    raise ConfigError(f"unknown profile kind {kind!r}", field=node._f("kind"))


def _path(node: _Node, base: Path) -> FramePath:
    length = node.num("L", positive=True)
    ds = node.num("ds", 1e-3, positive=True)
    prof = _profile(node.node("profile"), length, base)
    _guard(node._f("profile"), prof.validate, length, ds)
    return _guard(node.where, build_planar_path, prof, node.vec("binormal", 3),
                  node.vec("p0", 3, [0.0, 0.0, 0.0]), node.vec("t0", 3), length, ds)


def _bound_profile(node: _Node, key: str, s: np.ndarray, base: Path, scale: float = 1.0):
    v = node.get(key)
    where = node._f(key)
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return BoundProfile.constant(s, node.num(key) * scale)
    sub = node.node(key)
    kind = sub.get("kind")
    if kind == "sigmoid":
        back = sub.num("s_back", None)
        return _guard(where, sigmoid_bound, s, sub.num("s_mid"), sub.num("width", positive=True),
                      sub.num("hi") * scale, sub.num("lo") * scale, back)
    if kind == "csv":
        f = sub.file("file", base)
        with open(f, newline="") as fh:
            rows = list(csv.DictReader(fh))
        try:
            ss = np.array([float(r["s"]) for r in rows])
            vv = np.array([float(r["value"]) for r in rows]) * scale
        except (KeyError, ValueError):
            raise ConfigError("expected CSV columns s, value", field=where) from None
        return BoundProfile(s, np.interp(s, ss, vv))
    raise ConfigError(f"unknown bound profile kind {kind!r}", field=sub._f("kind"))


def _bounds(node: _Node, s, base) -> InputStateBounds:
    rate = node.get("rate_units", "rad/s")
    angle = node.get("angle_units", "rad")
    if rate not in ("rad/s", "deg/s"):
        raise ConfigError("expected 'rad/s' or 'deg/s'", field=node._f("rate_units"))
    if angle not in ("rad", "deg"):
        raise ConfigError("expected 'rad' or 'deg'", field=node._f("angle_units"))
    rs = np.pi / 180 if rate == "deg/s" else 1.0
    as_ = np.pi / 180 if angle == "deg" else 1.0
    return _guard(node.where, InputStateBounds,
                  node.num("p_max", positive=True) * rs, node.num("q_max", positive=True) * rs,
                  node.num("r_max", positive=True) * rs, node.num("F_min"), node.num("F_max"),
                  _bound_profile(node, "phi_max", s, base, as_),
                  _bound_profile(node, "theta_max", s, base, as_),
                  _bound_profile(node, "psi_max", s, base, as_))


def _corridor(node: _Node, path: FramePath, base: Path):
    kind = node.get("kind")
    s = path.s
    obstacles = {}
    if kind == "circular":
        cor = CorridorSpec.circular(_bound_profile(node, "r_obs", s, base))
    elif kind == "rectangular":
        w1_max = _bound_profile(node, "w1_max", s, base)
        w2_max = _bound_profile(node, "w2_max", s, base)
        w1_min = _bound_profile(node, "w1_min", s, base) if node.has("w1_min") else -w1_max
        w2_min = _bound_profile(node, "w2_min", s, base) if node.has("w2_min") else -w2_max
        cor = CorridorSpec.rectangular(w1_min, w1_max, w2_min, w2_max)
        window = int(node.num("window", 5))
        for i, ob in enumerate(node.get("obstacles", [])):
            on = _Node(ob, f"{node._f('obstacles')}[{i}]")
            pts = _guard(on._f("file"), load_obstacle_csv, on.file("file", base))
            affects = on.get("affects")
            inflate = on.num("inflate", 0.0)
            cor = _guard(on.where, restrict_bounds, cor, pts, path, affects, window,
                         inflate=inflate)
            obstacles[on.get("file")] = {"affects": affects, "points": int(len(pts))}
    else:
        raise ConfigError(f"unknown corridor kind {kind!r}", field=node._f("kind"))
    _guard(node.where, cor.validate, path)
    return cor, obstacles


def _schedule(node: Optional[_Node]) -> Schedule:
    if node is None:
        return Schedule()
    kw = {}
    for key in ("factor", "eps_floor", "nu_floor", "eps_f_floor", "nu_f_floor"):
        if node.has(key):
            kw[key] = node.num(key, positive=True)
    if node.has("max_outer"):
        kw["max_outer"] = int(node.num("max_outer"))
    if node.has("start"):
        st = node.node("start")
        kw["start"] = _guard(st.where, BarrierParams, st.num("eps", 1.0), st.num("nu", 1.0),
                             st.num("eps_f", 1.0), st.num("nu_f", 1.0))
    return _guard(node.where, Schedule, **kw)


def _final_box(node: Optional[_Node], path: FramePath, x0: np.ndarray):
    if node is None:
        return None
    tol = node.vec("tol", 8)
    if np.any(tol <= 0):
        raise ConfigError("tolerances must be positive", field=node._f("tol"))
    mode = node.get("velocity", "frenet")
    center = x0.copy()
    if mode == "frenet":
        # same tangential/normal/binormal velocity components as at s = 0
        center[2:5] = path.frame(path.n_nodes - 1).rotation @ (path.frame(0).rotation.T
                                                               @ x0[2:5])
    elif mode != "world":
        raise ConfigError("expected 'frenet' or 'world'", field=node._f("velocity"))
    return FinalBox.around(center, tol)


def _gains(node: Optional[_Node]):
    if node is None:
        return None
    Q = np.diag(node.vec("Q", 8))
    R = np.diag(node.vec("R", 4))
    PL = np.diag(node.vec("P_L", 8)) if node.has("P_L") else Q
    if np.any(np.diag(R) <= 0) or np.any(np.diag(Q) < 0) or np.any(np.diag(PL) < 0):
        raise ConfigError("Q and P_L must be nonnegative and R positive", field=node.where)
    return Q, R, PL


# --------------------------------------------------------------------------
# entry points
# --------------------------------------------------------------------------

def scenario_from_dict(data: dict, base: Optional[Path] = None,
                       source: Optional[Path] = None) -> ScenarioConfig:
    base = Path(base) if base is not None else Path.cwd()
    root = _Node(data, "")
    name = str(root.get("name", source.stem if source else "scenario"))
    path = _path(root.node("path"), base)
    vn = root.node("vehicle")
    vehicle = _guard("vehicle", VehicleParams, vn.num("m", positive=True), vn.num("g", 9.81))
    bounds = _bounds(root.node("bounds"), path.s, base)
    corridor, obstacles = _corridor(root.node("corridor"), path, base)
    sn = root.node("solver", None)
    solver = dict(DEFAULT_SOLVER)
    if sn is not None:
        solver["tol"] = sn.num("tol", None)
        solver["max_newton"] = int(sn.num("max_newton", 50))
        solver["pitch_margin"] = sn.num("pitch_margin", PITCH_MARGIN, positive=True)
    inn = root.node("init", None)
    if inn is None:
        init = InitSpec()
    else:
        init = _guard("init", InitSpec, inn.num("speed", 0.5), inn.num("yaw", 0.0))
    x0 = _guard("init", initial_state, path, vehicle, init, solver["pitch_margin"])
    final_box = _final_box(root.node("final_box", None), path, x0)
    return ScenarioConfig(
        name=name, source=source, raw=data, path=path, vehicle=vehicle, bounds=bounds,
        corridor=corridor, init=init, final_box=final_box,
        schedule=_schedule(sn.node("schedule", None) if sn is not None else None),
        x0=x0, tol=solver["tol"], max_newton=solver["max_newton"],
        pitch_margin=solver["pitch_margin"],
        gain_weights=_gains(sn.node("gain_weights", None) if sn is not None else None),
        obstacles=obstacles)


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario file; errors name the offending field."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return scenario_from_dict(data, base=path.parent, source=path)


def shipped_scenario(name: str) -> Path:
    """Path of a config shipped with the package (``scenario1`` or ``scenario2``)."""
    p = Path(__file__).with_name("scenarios") / f"{name}.json"
    if not p.is_file():
        raise ConfigError(f"no shipped scenario named {name!r}")
    return p
