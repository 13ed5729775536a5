import json

import numpy as np
import pytest
from scipy.optimize import brentq

from quadmintime.cli import main
from quadmintime.config import load_scenario, scenario_from_dict, shipped_scenario
from quadmintime.dynamics import rotation_matrix
from quadmintime.pronto import Trajectory
from quadmintime.run import FILES, StageFailure, export, plotdata, read_csv, run
from quadmintime.timemap import (
    TimeMap,
    build_time_map,
    interval_average_inputs,
    simulate_time_domain,
    to_time_domain,
)

from synthetic import resimulate, straight_scenario

STATES = ("w1", "w2", "v1", "v2", "v3", "phi", "theta", "psi")


def load_traj(run_dir):
    d = read_csv(run_dir / FILES["arclength"])
    X = np.column_stack([d[k] for k in STATES])
    U = np.column_stack([d[k] for k in "pqrF"])
    return Trajectory(d["s"], X, U), TimeMap(d["s"], d["t"])


# --------------------------------------------------------------------------
# time map
# --------------------------------------------------------------------------

def test_time_map_validation():
    with pytest.raises(ValueError):
        TimeMap(np.array([0.0, 1.0]), np.array([0.1, 1.0]))
    with pytest.raises(ValueError):
        TimeMap(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 1.0]))
    tm = TimeMap(np.array([0.0, 1.0, 2.0]), np.array([0.0, 0.5, 2.0]))
    assert tm.T == 2.0
    assert tm.time_at(1.5) == pytest.approx(1.25)
    assert tm.arclength_at(1.25) == pytest.approx(1.5)


def test_interval_average_inputs_preserve_impulse():
    t_nodes = np.array([0.0, 0.3, 0.65, 1.0])
    u_nodes = np.array([[1.0], [-2.0], [4.0], [9.0]])
    t = np.linspace(0, 1, 11)
    u = interval_average_inputs(t_nodes, u_nodes, t)
    # sample [0.2, 0.3) sees only the first hold, [0.3, 0.4) the second
    assert u[2, 0] == pytest.approx(1.0)
    assert u[3, 0] == pytest.approx(-2.0)
    # [0.6, 0.7) straddles the switch at 0.65
    assert u[6, 0] == pytest.approx((0.05 * -2.0 + 0.05 * 4.0) / 0.1)
    assert np.sum(u[:-1, 0] * 0.1) == pytest.approx(0.3 * 1.0 - 0.35 * 2.0 + 0.35 * 4.0)


def test_seed_time_map_is_cruise(straight_run):
    seed = read_csv(straight_run.dir / FILES["seed"])
    assert np.allclose(seed["t"], seed["s"] / 0.5, rtol=0, atol=1e-12)


def test_curved_time_map_matches_speed_integral():
    # circle of radius R flown at speed v offset by w1 inward: t = L (1 - k w1) / v
    d = straight_scenario(length=2.0)
    d["path"]["profile"] = {"kind": "constant", "k": 0.5}
    cfg = scenario_from_dict(d)
    n = cfg.path.n_nodes
    X = np.zeros((n, 8))
    X[:, 0] = 0.2
    X[:, 2:5] = 1.5 * cfg.path.tangents
    tm = build_time_map(Trajectory(cfg.path.s, X, np.zeros((n, 4))), cfg.path)
    assert tm.T == pytest.approx(2.0 * (1 - 0.5 * 0.2) / 1.5, rel=1e-12)


# --------------------------------------------------------------------------
# pipeline artifacts
# --------------------------------------------------------------------------

def test_artifacts_and_summary(straight_run):
    for f in FILES.values():
        assert (straight_run.dir / f).is_file()
    s = straight_run.summary
    assert s["success"]
    assert s["T"] == pytest.approx(s["cost_time"], rel=1e-9)
    assert s["min_margin"] > 0
    assert s["defect"] < 1e-8
    saved = json.loads((straight_run.dir / FILES["summary"]).read_text())
    assert saved["T"] == s["T"]


@pytest.mark.slow
def test_time_stamps(straight_run, scenario2_run):
    for r in (straight_run, scenario2_run):
        tab = read_csv(r.dir / FILES["time"])
        t = tab["t"]
        assert t[0] == 0.0
        assert t[-1] == pytest.approx(r.summary["T"], rel=1e-12)
        assert np.all(np.diff(t) > 0)
        assert np.all(np.diff(tab["s"]) >= 0)


def test_straight_corridor_against_point_mass_bounds(straight_run):
    """Bracket the minimum time between point-mass limits.

    Upper: level flight at the largest tilt, a = g tan(theta_max), is a feasible
    strategy apart from rate transients. Lower: no admissible attitude can give
    a forward acceleration above F_max/m times the largest forward component of
    the thrust axis over the angle box.
    """
    cfg = scenario_from_dict(straight_scenario())
    b, veh = cfg.bounds, cfg.vehicle
    L, v0 = 3.0, 0.5

    def travel(a):
        return brentq(lambda t: v0 * t + 0.5 * a * t * t - L, 0.0, 100.0)

    t_level = travel(veh.g * np.tan(b.theta_max(0.0)))
    g = np.linspace(-0.6, 0.6, 25)
    fwd = max(-(rotation_matrix([ph, th, ps]) @ [0, 0, 1.0])[0]
              for ph in g for th in g for ps in g)
    t_lb = travel(1.01 * fwd * b.F_max / veh.m)
    T = straight_run.summary["T"]
    assert t_lb <= T <= 1.03 * t_level


def test_runs_are_deterministic(tmp_path):
    cfg = scenario_from_dict(straight_scenario(length=1.0))
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    for key in ("arclength", "time", "timemap", "bounds", "seed", "frame"):
        a = (tmp_path / "a" / FILES[key]).read_bytes()
        assert a == (tmp_path / "b" / FILES[key]).read_bytes(), key


@pytest.mark.slow
def test_export_round_trip_and_resimulation(scenario2_run):
    cfg = load_scenario(shipped_scenario("scenario2"))
    traj, tm = load_traj(scenario2_run.dir)
    ts = to_time_domain(traj, tm, cfg.path)
    tab = read_csv(scenario2_run.dir / FILES["time"])
    assert np.allclose(ts.t, tab["t"], rtol=0, atol=1e-15)
    # the internal RK4 and an adaptive integrator agree on the exported inputs
    Y = simulate_time_domain(ts.x[0], ts.t, ts.u, cfg.vehicle)
    ref = resimulate(tab, cfg.vehicle)
    assert np.abs(Y[:, :3] - ref).max() < 1e-6
    assert np.abs(ref - ts.position).max() < 1e-3


def test_stage_failure_names_initialization(tmp_path):
    cfg = scenario_from_dict(straight_scenario(length=1.0, F_max=0.3))
    with pytest.raises(StageFailure) as exc:
        run(cfg, tmp_path)
    assert exc.value.stage == "initialization"


@pytest.mark.slow
def test_plotdata_bundles(scenario2_run, scenario1_run, tmp_path):
    files = plotdata(scenario2_run.dir, tmp_path / "p2")
    names = sorted(f.stem for f in files)
    assert names == sorted(["w1", "w2", "velocity", "angles", "rates", "thrust", "position"])
    vel = read_csv(tmp_path / "p2" / "velocity.csv")
    assert vel["tv"].max() == pytest.approx(scenario2_run.summary["peak_tangential_speed"])
    assert np.allclose(vel["speed"], np.sqrt(vel["tv"] ** 2 + vel["nv"] ** 2 + vel["bv"] ** 2))
    w1 = read_csv(tmp_path / "p2" / "w1.csv")
    assert np.allclose(w1["w1_max"], 0.28)
    thr = read_csv(tmp_path / "p2" / "thrust.csv")
    assert list(thr) == ["s", "F", "F_min", "F_max"]
    w2 = read_csv(plotdata(scenario1_run.dir, tmp_path / "p1")[1])
    assert w2["w2_min"].max() > -0.15  # the cylinder top
    assert np.all(w2["w2"] > w2["w2_min"]) and np.all(w2["w2"] < w2["w2_max"])
    with pytest.raises(FileNotFoundError):
        plotdata(tmp_path / "nothing")


def test_export_paths(straight_run, tmp_path):
    assert export(straight_run.dir).name == FILES["time"]
    assert export(straight_run.dir, "arclength").name == FILES["arclength"]
    with pytest.raises(FileNotFoundError):
        export(tmp_path)


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------

def test_cli_check(capsys, tmp_path):
    assert main(["check", str(shipped_scenario("scenario2"))]) == 0
    assert "ok" in capsys.readouterr().out
    bad = tmp_path / "bad.json"
    d = straight_scenario()
    del d["vehicle"]["m"]
    bad.write_text(json.dumps(d))
    assert main(["check", str(bad)]) == 1
    assert "vehicle.m" in capsys.readouterr().err


def test_cli_solve_failure_reports_stage(capsys, tmp_path):
    f = tmp_path / "hot.json"
    f.write_text(json.dumps(straight_scenario(length=1.0, F_max=0.3)))
    assert main(["solve", str(f), "--out", str(tmp_path / "out")]) == 1
    assert "stage initialization failed" in capsys.readouterr().err


def test_cli_solve_export_plotdata(capsys, tmp_path):
    f = tmp_path / "short.json"
    f.write_text(json.dumps(straight_scenario(length=1.0)))
    out = tmp_path / "out"
    assert main(["solve", str(f), "--out", str(out)]) == 0
    assert "T = " in capsys.readouterr().out
    dst = tmp_path / "t.csv"
    assert main(["export", str(out), "-o", str(dst)]) == 0
    assert dst.read_bytes() == (out / FILES["time"]).read_bytes()
    assert main(["export", str(out), "--arclength"]) == 0
    assert capsys.readouterr().out.startswith("s,t,w1")
    assert main(["plotdata", str(out)]) == 0
    assert (out / "plotdata" / "thrust.csv").is_file()
    assert main(["plotdata", str(tmp_path / "none")]) == 1
    assert "stage plotdata failed" in capsys.readouterr().err
