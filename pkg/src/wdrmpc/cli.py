"""Command-line entry point: ``wdrmpc {solve,tube,sweep,evaluate,validate}``.

Exit codes: 0 success, 1 a validation check failed, 2 infeasible window,
3 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .harness import (METHODS, ExperimentSpec, build_tube, evaluate_run, physics_residuals, prepare,
                      resolve_network, run_method, sweep_and_emit)
from .grid import require_valid
from .scheduler import InfeasibleWindow
from .tube import EmptyTightenedSet, write_tube_csv

EXIT_OK, EXIT_CHECK, EXIT_INFEASIBLE, EXIT_CONFIG = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with ExperimentSpec fields; flags override it")
    p.add_argument("--network", help="bundled case name (case3, case38, case94) or JSON path")
    p.add_argument("--res-samples", help="CSV of historical RES outputs")
    p.add_argument("--disturbances", help="CSV of charging-demand disturbance sequences")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--mu1", type=float)
    p.add_argument("--mu2", type=float)
    p.add_argument("--mu-tube", type=float, dest="mu_tube")
    p.add_argument("--rho", type=float, help="closed-loop contraction factor")
    p.add_argument("--horizon", type=int, dest="window", help="window length T_c")
    p.add_argument("--receding", type=int, dest="iterations", help="receding iterations T_l")
    p.add_argument("--rounds", type=int)
    p.add_argument("--tests", type=int, dest="tests_per_round")
    p.add_argument("--seed", type=int)
    p.add_argument("--stations", type=lambda s: tuple(int(v) for v in s.split(",")),
                   help="comma separated station buses")
    p.add_argument("--exact-dual", action="store_true", default=None, dest="exact_dual",
                   help="use the exact dual instead of the accelerated bound")
    p.add_argument("--out", default="wdrmpc_out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wdrmpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("solve", "one full two-stage run"), ("tube", "stage 1 only"),
                       ("sweep", "parameter sweeps and table CSVs"),
                       ("evaluate", "run a method and test it out of sample"),
                       ("validate", "run the oracle cross-checks")):
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "sweep":
            p.add_argument("--tables", default="1,2,3,4,fig2,fig3",
                           help="comma separated subset of 1,2,3,4,fig2,fig3")
            p.add_argument("--epsilons", type=lambda s: [float(v) for v in s.split(",")])
            p.add_argument("--betas", type=lambda s: [float(v) for v in s.split(",")])
            p.add_argument("--sample-sizes", dest="sample_sizes",
                           type=lambda s: [int(v) for v in s.split(",")])
            p.add_argument("--station-counts", dest="station_counts",
                           type=lambda s: [int(v) for v in s.split(",")])
    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    names = {f.name for f in fields(ExperimentSpec)}
    overrides = {k: v for k, v in vars(args).items() if k in names and v is not None}
    if args.config:
        return ExperimentSpec.from_json(args.config, **overrides)
    return ExperimentSpec(**overrides)


def _write_actions(path: Path, run) -> None:
    sched = run.schedule
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        S = sched.nominal_soc.shape[1]
        header = ["t"] + [f"p_b{s}" for s in range(S)] + [f"soc_nominal{s}" for s in range(S)]
        header += [f"soc_realized{s}" for s in range(S)] + ["v_min", "v_max", "p_gen_total",
                                                             "line_p_root"]
        w.writerow(header)
        for i, a in enumerate(sched.actions):
            w.writerow([a.t, *a.p_b, *sched.nominal_soc[i], *sched.realized_soc[i],
                        float(a.voltage.min()), float(a.voltage.max()), float(a.p_gen.sum()),
                        float(a.line_p[0]) if a.line_p.size else 0.0])


def cmd_solve(spec: ExperimentSpec, out: Path) -> int:
    data = prepare(spec)
    run = run_method(spec, data)
    _write_actions(out / "actions.csv", run)
    sched = run.schedule
    summary = {"method": run.method, "costs": sched.costs, "objective": sched.objective,
               "clamp_events": sched.clamp_events, "offline_seconds": run.offline_time,
               "online_seconds": sched.solve_times, "tube_radius": run.tube.radius(),
               "physics": physics_residuals(data.network, sched.actions)}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, default=float))
    print(json.dumps({k: summary[k] for k in ("method", "costs", "clamp_events")}, default=float))
    return EXIT_OK


def cmd_tube(spec: ExperimentSpec, out: Path) -> int:
    data = prepare(spec)
    _, tube, sets, seconds = build_tube(spec, data)
    write_tube_csv(tube, sets, out / "tube.csv")
    print(f"tube radius {tube.radius():.6g} over {tube.horizon} slots in {seconds:.3f}s")
    return EXIT_OK


def cmd_evaluate(spec: ExperimentSpec, out: Path) -> int:
    data = prepare(spec)
    run = run_method(spec, data)
    rep = evaluate_run(spec, data, run)
    (out / "reliability.json").write_text(json.dumps(rep.summary(), indent=1))
    print(f"{run.method}: reliability {rep.mean:.4f} +- {rep.std:.4f} over {rep.rounds} rounds")
    return EXIT_OK


def cmd_sweep(spec: ExperimentSpec, out: Path, tables: str) -> int:
    for p in sweep_and_emit(spec, out, tuple(tables.split(","))):
        print(p)
    return EXIT_OK


def cmd_validate(seed: int) -> int:
    from .validation import run_checks

    failed = 0
    for name, ok, detail in run_checks(seed):
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        failed += not ok
    return EXIT_OK if failed == 0 else EXIT_CHECK


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command == "validate":
        return cmd_validate(args.seed or 0)
    try:
        spec = spec_from_args(args)
        if args.command == "sweep":
            for axis in ("epsilons", "betas", "sample_sizes", "station_counts"):
                if getattr(args, axis) is not None:
                    setattr(spec, axis, getattr(args, axis))
        require_valid(resolve_network(spec.network))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    except (ValueError, FileNotFoundError, TypeError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "solve":
            return cmd_solve(spec, out)
        if args.command == "tube":
            return cmd_tube(spec, out)
        if args.command == "evaluate":
            return cmd_evaluate(spec, out)
        return cmd_sweep(spec, out, args.tables)
    except (InfeasibleWindow, EmptyTightenedSet) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    np.set_printoptions(precision=4)
    sys.exit(main())
