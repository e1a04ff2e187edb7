"""Command line entry point: ``urbf {regress,maze,gradcheck,verify,aggregate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import runner
from .gradcheck import REL_TOL, run_gradcheck
from .layers import run_verify

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN = 2
EXIT_VERIFY = 3

log = logging.getLogger("urbf")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config (INI)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--reps", type=int, help="number of repetitions")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--desk-scale", action="store_true", help="5 repetitions, 50k maze timesteps")
    p.add_argument("--workers", type=int, default=1, help="parallel repetitions")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urbf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("regress", help="function-regression sweep"))
    _common(sub.add_parser("maze", help="maze deep Q-learning sweep"))
    p = sub.add_parser("gradcheck", help="autodiff vs finite differences")
    _common(p)
    p.add_argument("--cases", type=int, default=20, help="cases per operation kind")
    _common(sub.add_parser("verify", help="kernel-map injectivity and interpolation checks"))
    p = sub.add_parser("aggregate", help="summaries and plot tables from stored runs")
    _common(p)
    p.add_argument("--axis", choices=runner.AXES, action="append", help="plot axis (repeatable)")
    return parser


def _experiment(args, task: str) -> int:
    try:
        cfg = runner.load_config(args.config) if args.config else runner.default_config(task)
        if cfg.task != task:
            raise runner.ConfigError(f"config is for task {cfg.task!r}, not {task!r}")
        if args.desk_scale:
            cfg = runner.desk(cfg)
        changes = {}
        if args.seed is not None:
            changes["base_seed"] = args.seed
        if args.reps is not None:
            changes["repetitions"] = args.reps
        if args.out is not None:
            changes["output_dir"] = str(args.out)
        cfg = replace(cfg, **changes)
    except runner.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        results = runner.run_experiment(cfg, workers=args.workers)
    except OSError as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN
    out = Path(cfg.output_dir)
    failed = [r for r in results if not r.ok]
    if len(failed) < len(results):
        aggs = runner.aggregate(results)
        runner.write_summary(aggs, out)
        for a in aggs:
            c = a.condition
            print(f"{c.key():<24} mean={a.mean:.6g} std={a.std:.4g} n={a.count} params={a.param_count}")
    for r in failed:
        print(f"FAILED {r.stem()}: {r.error.splitlines()[0]}", file=sys.stderr)
    return EXIT_RUN if failed else EXIT_OK


def _gradcheck(args) -> int:
    results = run_gradcheck(args.cases, args.seed or 0)
    worst: dict[str, float] = {}
    for r in results:
        worst[r.kind] = max(worst.get(r.kind, 0.0), r.rel_error)
    for kind, err in worst.items():
        print(f"{kind:<16} max rel err {err:.3e} {'ok' if err < REL_TOL else 'FAIL'}")
    bad = [r for r in results if not r.passed]
    print(f"{len(results) - len(bad)}/{len(results)} cases within {REL_TOL:g}")
    return EXIT_VERIFY if bad else EXIT_OK


def _verify(args) -> int:
    report = run_verify(args.seed or 0)
    for k, ok in report["injectivity"].items():
        print(f"injectivity K={k}: {'ok' if ok else 'FAIL'}")
    for seed, val in report["interpolation"].items():
        print(f"interpolation seed={seed}: mse={val:.3e}")
    print(f"interpolation fits: {report['fits']}/{len(report['interpolation'])}")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def _aggregate(args) -> int:
    directory = args.out
    if directory is None and args.config:
        try:
            directory = Path(runner.load_config(args.config).output_dir)
        except runner.ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if directory is None:
        print("config error: aggregate needs --out or --config", file=sys.stderr)
        return EXIT_CONFIG
    results = runner.load_results(directory)
    try:
        aggs = runner.aggregate(results)
    except ValueError as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN
    runner.write_summary(aggs, directory)
    task = aggs[0].task
    axes = args.axis or (["complexity", "param_count"] if task == "regression" else ["timestep", "param_count"])
    for axis in axes:
        try:
            path = runner.emit_plot_data(aggs, axis, Path(directory) / f"plot_{axis}.csv")
        except ValueError as exc:
            print(f"skipping axis {axis}: {exc}", file=sys.stderr)
            continue
        print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "regress":
        return _experiment(args, "regression")
    if args.command == "maze":
        return _experiment(args, "maze")
    if args.command == "gradcheck":
        return _gradcheck(args)
    if args.command == "verify":
        return _verify(args)
    return _aggregate(args)


if __name__ == "__main__":
    sys.exit(main())
