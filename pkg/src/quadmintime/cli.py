"""Command line: ``quadmintime solve|check|export|plotdata``."""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import load_scenario
from .errors import QuadMintimeError
from .run import StageFailure, export, plotdata, run


def _solve_one(config: str, out: str) -> tuple:
    """Worker body; returns ``(config, ok, text)`` so failures cross process boundaries."""
    try:
        summary = run(config, out)
    except StageFailure as exc:
        return config, False, f"stage {exc.stage} failed: {exc.cause}"
    except Exception as exc:  # keep the other runs going
        return config, False, f"stage unknown failed: {exc!r}"
    return config, True, f"T = {summary['T']:.4f} s, min margin {summary['min_margin']:.2e}"


def cmd_solve(args) -> int:
    out = Path(args.out)
    if len(args.configs) == 1:
        jobs = [(args.configs[0], str(out))]
    else:
        stems = [Path(c).stem for c in args.configs]
        if len(set(stems)) != len(stems):
            print("error: config file names must be distinct", file=sys.stderr)
            return 2
        jobs = [(c, str(out / st)) for c, st in zip(args.configs, stems)]
    if len(jobs) == 1 or args.jobs == 1:
        results = [_solve_one(*j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_solve_one, *zip(*jobs)))
    status = 0
    for config, ok, text in results:
        print(f"{config}: {text}", file=sys.stdout if ok else sys.stderr)
        status = status if ok else 1
    return status


def cmd_check(args) -> int:
    try:
        cfg = load_scenario(args.config)
        cfg.problem()
    except QuadMintimeError as exc:
        print(f"stage config failed: {exc}", file=sys.stderr)
        return 1
    print(f"{args.config}: ok ({cfg.name}, L = {cfg.path.s[-1]:g} m, "
          f"{cfg.path.n_nodes} nodes)")
    return 0


def cmd_export(args) -> int:
    try:
        src = export(args.run_dir, "arclength" if args.arclength else "time")
    except FileNotFoundError as exc:
        print(f"stage export failed: {exc}", file=sys.stderr)
        return 1
    if args.output:
        shutil.copyfile(src, args.output)
    else:
        with open(src) as fh:
            shutil.copyfileobj(fh, sys.stdout)
    return 0


def cmd_plotdata(args) -> int:
    try:
        files = plotdata(args.run_dir, args.output)
    except (FileNotFoundError, KeyError) as exc:
        print(f"stage plotdata failed: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(f)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quadmintime",
                                 description="Minimum-time quadrotor trajectories in a corridor.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one or more scenario configs")
    p.add_argument("configs", nargs="+")
    p.add_argument("--out", required=True,
                   help="output directory (one subdirectory per config if several)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes for several configs")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check", help="validate a config without solving")
    p.add_argument("config")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("export", help="print an exported trajectory CSV")
    p.add_argument("run_dir")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--time", action="store_true", help="time-sampled trajectory (default)")
    g.add_argument("--arclength", action="store_true", help="arc-length trajectory")
    p.add_argument("-o", "--output", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("plotdata", help="write per-figure CSV bundles for a run")
    p.add_argument("run_dir")
    p.add_argument("-o", "--output", help="directory (default <run_dir>/plotdata)")
    p.set_defaults(func=cmd_plotdata)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
