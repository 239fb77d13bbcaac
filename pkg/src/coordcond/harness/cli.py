"""Command-line entry point: ``coordcond {list,run,compare,sweep}``.

Exit status is 0 on success, 1 on usage errors (bad flags, unknown scenario)
and 2 when a solve fails (factorization failure, divergence, missing
reference).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from coordcond.basis import BasisError
from coordcond.energy import EnergyError
from coordcond.harness import io
from coordcond.harness.scenarios import (
    SCENARIOS, ScenarioError, list_scenarios, load_config, run_scenario, run_single,
)
from coordcond.mesh import MeshError
from coordcond.solvers import METHODS, SolverError

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2

_SOLVER_ERRORS = (SolverError, BasisError, EnergyError, np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("target", help="scenario name (see 'list') or path to a scene/repro JSON file")
    common.add_argument("--solver", help=f"one of {', '.join(METHODS)} or a variant label from the config")
    common.add_argument("--max-iters", type=_positive_int, help="iteration cap (overrides the config)")
    common.add_argument("--tol", type=float, help="convergence tolerance (overrides the config)")
    common.add_argument("--line-search", action="store_true", help="enable the global Armijo line search")
    common.add_argument("--corotated", action="store_true", help="rotate the basis by per-vertex rotations")
    common.add_argument("--restart-period", type=_positive_int, help="rebuild the basis every N steps")
    common.add_argument("--seed", type=int, default=0, help="base seed for randomized scenarios")
    common.add_argument("--out-dir", type=Path, help="output directory (default: out/<scenario>)")
    common.add_argument("--emit", action="extend", nargs="+", choices=("csv", "json", "svg"),
                        help="artifacts to write (default: csv)")
    common.add_argument("--timing", action="store_true", help="fill wall_ms (makes outputs non-reproducible)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="coordcond", description="Coordinate condensation solver benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("list", help="list the shipped scenarios")
    sub.add_parser("run", parents=[common], help="one scene, one solver (default cc)")
    sub.add_parser("compare", parents=[common], help="the scenario's full solver matrix")
    p = sub.add_parser("sweep", parents=[common], help="solver matrix over the sweep axis")
    p.add_argument("--values", type=_values, help="comma-separated sweep values (overrides the config)")
    return parser


def _list(out) -> None:
    for name in list_scenarios():
        fn = SCENARIOS.get(name)
        doc = (fn.__doc__ or "").strip().splitlines()[0] if fn else "custom scene"
        print(f"{name:22s} {doc}", file=out)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.command == "list":
        _list(sys.stdout)
        return EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")

    solver = args.solver
    if args.command == "run" and solver is None:
        solver = "cc"
    try:
        cfg = load_config(
            args.target, solver=solver, max_iters=args.max_iters, tol=args.tol,
            line_search=args.line_search, corotated=args.corotated, restart_period=args.restart_period,
            values=getattr(args, "values", None), seed=args.seed,
        )
        if args.command == "run" and len(cfg.solvers) > 1:
            cfg.solvers = cfg.solvers[:1]
        if args.command == "sweep" and cfg.axis is None:
            raise ScenarioError(f"scenario {cfg.name!r} has no sweep axis")
    except (ScenarioError, MeshError, ValueError, KeyError) as exc:
        print(f"coordcond: error: {exc}", file=sys.stderr)
        if isinstance(exc, ScenarioError) and "unknown scenario" in str(exc):
            _list(sys.stderr)
        return EXIT_USAGE

    try:
        result = run_single(cfg) if args.command == "run" else run_scenario(cfg)
    except _SOLVER_ERRORS as exc:
        print(f"coordcond: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    out_dir = args.out_dir or Path("out") / cfg.name
    io.write_result(out_dir, result, args.emit or ["csv"], timing=args.timing)
    w = sys.stdout
    w.write(",".join(io.SUMMARY_COLUMNS) + "\n")
    for rec in result.records:
        w.write(",".join(io.summary_row(rec, args.timing)) + "\n")
    if args.command == "run" and any(r.outcome == "diverged" for r in result.records):
        print("coordcond: solver diverged", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
