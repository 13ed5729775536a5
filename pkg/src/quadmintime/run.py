"""End-to-end pipeline: config -> seed -> barrier continuation -> exported artifacts."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .config import ScenarioConfig, load_scenario
from .errors import QuadMintimeError
from .flatness import initial_trajectory
from .framepath import reconstruct_positions
from .pronto import Trajectory, continuation, margins, trajectory_defect
from .timemap import ARCLENGTH_COLUMNS, TIME_COLUMNS, build_time_map, to_time_domain

log = logging.getLogger(__name__)

ACTIVE_MARGIN = 0.02  # normalized units: -c below this counts as "on the bound"
THRUST_TOL = 0.01  # relative distance to F_max for the thrust-at-max fraction
RATE_REGION = 0.9  # |p| / p_max above this counts as the lower or upper bound region

FILES = {
    "arclength": "trajectory_s.csv",
    "time": "trajectory_t.csv",
    "timemap": "timemap.csv",
    "bounds": "bounds.csv",
    "log": "solver_log.jsonl",
    "summary": "summary.json",
    "seed": "initial_s.csv",
    "frame": "frame.csv",
}

FRAME_COLUMNS = ("s", "x", "y", "z", "tx", "ty", "tz", "nx", "ny", "nz", "bx", "by", "bz", "k")


class StageFailure(QuadMintimeError):
    """A pipeline stage failed; ``stage`` names it for the CLI exit message."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


# --------------------------------------------------------------------------
# tables
# --------------------------------------------------------------------------

def arclength_table(traj: Trajectory, path, t: np.ndarray) -> np.ndarray:
    pos = reconstruct_positions(path, traj.x[:, 0], traj.x[:, 1])
    return np.column_stack((traj.s, t, traj.x, traj.u, pos))


def frame_table(path) -> np.ndarray:
    return np.column_stack((path.s, path.points, path.tangents, path.normals, path.binormals,
                            path.curvature))


def bounds_table(cfg: ScenarioConfig) -> tuple:
    """Per-node bound values, in the units of the state and input columns."""
    b, c, s = cfg.bounds, cfg.corridor, cfg.path.s
    n = s.size
    cols = {"s": s}
    for name in ("p", "q", "r"):
        v = getattr(b, f"{name}_max")
        cols[f"{name}_min"], cols[f"{name}_max"] = np.full(n, -v), np.full(n, v)
    cols["F_min"], cols["F_max"] = np.full(n, b.F_min), np.full(n, b.F_max)
    for name in ("phi", "theta", "psi"):
        v = getattr(b, f"{name}_max").values
        cols[f"{name}_min"], cols[f"{name}_max"] = -v, v
    if c.kind == "circular":
        cols["r_obs"] = c.r_obs.values
    else:
        for name in ("w1_min", "w1_max", "w2_min", "w2_max"):
            cols[name] = getattr(c, name).values
    return tuple(cols), np.column_stack(list(cols.values()))


def write_csv(path: Path, columns, data: np.ndarray) -> None:
    # repr-exact floats keep repeated runs byte-identical
    np.savetxt(path, data, delimiter=",", header=",".join(columns), comments="", fmt="%.17g")


def read_csv(path: Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing artifact {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {h: data[:, i] for i, h in enumerate(header)}


# --------------------------------------------------------------------------
# summary extraction
# --------------------------------------------------------------------------

def _intervals(s: np.ndarray, mask: np.ndarray) -> list:
    out = []
    if not mask.any():
        return out
    edges = np.flatnonzero(np.diff(np.concatenate(([0], mask.astype(int), [0]))))
    for a, b in zip(edges[::2], edges[1::2]):
        out.append([float(s[a]), float(s[b - 1])])
    return out


def rate_switches(rate: np.ndarray, bound: float, region: float = RATE_REGION) -> list:
    """Sequence of visited bound regions (-1 lower, +1 upper), repeats collapsed."""
    lab = np.where(rate <= -region * bound, -1, np.where(rate >= region * bound, 1, 0))
    seq = [int(v) for v in lab if v != 0]
    return [v for i, v in enumerate(seq) if i == 0 or v != seq[i - 1]]


def constraint_report(problem, traj: Trajectory) -> dict:
    """Per-constraint min margin and activity intervals, in normalized units."""
    c = problem.constraint_values(traj.x, traj.u)
    s = traj.s
    z = np.hstack((traj.x, traj.u))
    sc = problem.constraints
    nb = sc.idx.size
    rep = {}
    for j, name in enumerate(problem.constraint_names):
        m = -c[:, j]
        entry = {"min_margin": float(m.min()), "s_at_min": float(s[np.argmin(m)])}
        active = m < ACTIVE_MARGIN
        if j < nb:
            side = sc.a[:, j] * z[:, sc.idx[j]] + sc.b[:, j]
            entry["lower"] = _intervals(s, active & (side < 0))
            entry["upper"] = _intervals(s, active & (side >= 0))
        else:
            entry["active"] = _intervals(s, active)
        rep[name] = entry
    cf = problem.final_constraint_values(traj.x[-1])
    if cf is not None:
        rep["final_box"] = {"min_margin": float(np.min(-cf))}
    return rep


def summarize(cfg: ScenarioConfig, problem, traj: Trajectory, tmap, report) -> dict:
    b = cfg.bounds
    F = traj.u[:, 3]
    tv = np.einsum("ij,ij->i", cfg.path.tangents, traj.x[:, 2:5])
    speed = np.linalg.norm(traj.x[:, 2:5], axis=1)
    ms, mf = margins(problem, traj)
    # the final box centers x_w0 with its velocity carried into the end frame
    target = cfg.final_box.center if cfg.final_box is not None else cfg.x0
    closure = float(np.linalg.norm(traj.x[-1] - target))
    outer = [o.as_dict() for o in report.outer]
    return {
        "name": cfg.name,
        "success": bool(report.success),
        "message": report.message,
        "T": tmap.T,
        "cost_time": problem.elapsed_time(traj),
        "min_margin": float(min(ms, mf)),
        "constraints": constraint_report(problem, traj),
        "thrust_at_max_fraction": float(np.mean(F >= b.F_max * (1.0 - THRUST_TOL))),
        "roll_rate_regions": rate_switches(traj.u[:, 0], b.p_max),
        "peak_tangential_speed": float(tv.max()),
        "peak_speed": float(speed.max()),
        "speed_min_increment": float(np.min(np.diff(speed))),
        "closure_norm": closure,
        "closure_norm_world": float(np.linalg.norm(traj.x[-1] - cfg.x0)),
        "defect": trajectory_defect(problem, traj),
        "outer": [{k: v for k, v in o.items() if k != "seconds"} for o in outer],
    }


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------

def _json(obj):
    return json.dumps(obj, sort_keys=True, allow_nan=True)


def run(config: Union[str, Path, ScenarioConfig], out_dir: Union[str, Path],
        dt: float = 2e-3) -> dict:
    """Solve one scenario and write every artifact to ``out_dir``.

    Returns the summary. A failing stage raises :class:`StageFailure`; when the
    failure happens during continuation the best feasible trajectory so far is
    still exported and the summary is written with ``success = false``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    try:
        cfg = config if isinstance(config, ScenarioConfig) else load_scenario(config)
    except QuadMintimeError as exc:
        raise StageFailure("config", exc) from exc
    try:
        problem = cfg.problem()
    except QuadMintimeError as exc:
        raise StageFailure("setup", exc) from exc
    try:
        traj0, margin0 = initial_trajectory(problem, cfg.init)
    except QuadMintimeError as exc:
        raise StageFailure("initialization", exc) from exc
    write_csv(out / FILES["seed"], ARCLENGTH_COLUMNS,
              arclength_table(traj0, cfg.path, build_time_map(traj0, cfg.path).t))
    log.info("%s: seed T=%.4f margin=%.3e", cfg.name, problem.elapsed_time(traj0), margin0)

    with open(out / FILES["log"], "w") as fh:
        fh.write(_json({"event": "seed", "T": problem.elapsed_time(traj0),
                        "min_margin": margin0,
                        "defect": trajectory_defect(problem, traj0)}) + "\n")

        def on_iter(outer, rec, tr):
            row = {"event": "newton", "outer": outer, **rec.as_dict(),
                   "T": problem.elapsed_time(tr), "defect": trajectory_defect(problem, tr)}
            fh.write(_json(row) + "\n")

        try:
            traj, report = continuation(problem, traj0, cfg.schedule, tol=cfg.tol,
                                        max_iter=cfg.max_newton, callback=on_iter)
        except QuadMintimeError as exc:
            raise StageFailure("continuation", exc) from exc
        for o in report.outer:
            d = o.as_dict()
            d.pop("seconds", None)
            fh.write(_json({"event": "outer", **d}) + "\n")

    tmap = build_time_map(traj, cfg.path)
    write_csv(out / FILES["arclength"], ARCLENGTH_COLUMNS, arclength_table(traj, cfg.path, tmap.t))
    write_csv(out / FILES["timemap"], ("s", "t"), np.column_stack((tmap.s, tmap.t)))
    write_csv(out / FILES["time"], TIME_COLUMNS, to_time_domain(traj, tmap, cfg.path, dt).table())
    write_csv(out / FILES["bounds"], *bounds_table(cfg))
    write_csv(out / FILES["frame"], FRAME_COLUMNS, frame_table(cfg.path))
    summary = summarize(cfg, problem, traj, tmap, report)
    (out / FILES["summary"]).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("%s: T=%.4f s (%s) in %.1f s", cfg.name, tmap.T, report.message,
             time.perf_counter() - t_start)
    if not report.success:
        raise StageFailure("continuation", QuadMintimeError(report.message))
    return summary


# --------------------------------------------------------------------------
# post-processing
# --------------------------------------------------------------------------

def export(run_dir, kind: str = "time") -> Path:
    """Path of the exported trajectory file, checking that it exists."""
    p = Path(run_dir) / FILES["time" if kind == "time" else "arclength"]
    if not p.is_file():
        raise FileNotFoundError(f"missing artifact {p}")
    return p


def plotdata(run_dir, out_dir: Optional[Union[str, Path]] = None) -> list:
    """One CSV per plotted quantity with the relevant bounds as extra columns."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir / "plotdata"
    tr = read_csv(run_dir / FILES["arclength"])
    bd = read_csv(run_dir / FILES["bounds"])
    out.mkdir(parents=True, exist_ok=True)
    s = tr["s"]
    if "r_obs" in bd:
        w_bounds = {"w1": (-bd["r_obs"], bd["r_obs"]), "w2": (-bd["r_obs"], bd["r_obs"])}
    else:
        w_bounds = {w: (bd[f"{w}_min"], bd[f"{w}_max"]) for w in ("w1", "w2")}
    bundles = {}
    for w in ("w1", "w2"):
        bundles[w] = (("s", w, f"{w}_min", f"{w}_max"), (s, tr[w]) + w_bounds[w])
    fr = read_csv(run_dir / FILES["frame"])
    tan, nor, bin_ = (np.column_stack([fr[f"{d}{c}"] for c in "xyz"]) for d in "tnb")
    v = np.column_stack((tr["v1"], tr["v2"], tr["v3"]))
    bundles["velocity"] = (("s", "tv", "nv", "bv", "speed"),
                           (s, np.einsum("ij,ij->i", tan, v), np.einsum("ij,ij->i", nor, v),
                            np.einsum("ij,ij->i", bin_, v), np.linalg.norm(v, axis=1)))
    ang = ["s"]
    cols = [s]
    for a in ("phi", "theta", "psi"):
        ang += [a, f"{a}_min", f"{a}_max"]
        cols += [tr[a], bd[f"{a}_min"], bd[f"{a}_max"]]
    bundles["angles"] = (tuple(ang), tuple(cols))
    rt = ["s"]
    cols = [s]
    for a in ("p", "q", "r"):
        rt += [a, f"{a}_min", f"{a}_max"]
        cols += [tr[a], bd[f"{a}_min"], bd[f"{a}_max"]]
    bundles["rates"] = (tuple(rt), tuple(cols))
    bundles["thrust"] = (("s", "F", "F_min", "F_max"), (s, tr["F"], bd["F_min"], bd["F_max"]))
    bundles["position"] = (("t", "px", "py", "pz"), (tr["t"], tr["px"], tr["py"], tr["pz"]))
    written = []
    for name, (columns, data) in bundles.items():
        p = out / f"{name}.csv"
        write_csv(p, columns, np.column_stack(data))
        written.append(p)
    return written
