"""Command line entry point: ``fdcells {run,sweep,solve-dump}``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import convexify as cx
from . import orchestrator as orc
from . import solver
from .channel import draw_channels, dump_channels, load_channels
from .scenario import DUPLEX, SETUPS, build_instance, desk_config, harvest_for_ratio, load_config


def _scenario(args):
    changes = {}
    if args.setup:
        changes["setup"] = args.setup
    if args.duplex:
        changes["duplex"] = args.duplex
    if args.alpha is not None:
        changes["decode_eff"] = args.alpha
    if args.num_sbs is not None:
        changes["num_sbs"] = args.num_sbs
    if args.config:
        cfg, _, _ = load_config(args.config)
        cfg = cfg.replace(**changes)
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
    else:
        cfg = desk_config(args.seed or 0, **changes)
    if args.eh_ratio is not None:
        cfg = cfg.replace(harvest_power=harvest_for_ratio(args.eh_ratio, cfg))
    cfg.validate()
    return cfg


def cmd_run(args):
    cfg = _scenario(args)
    inst = build_instance(cfg)
    ch = load_channels(args.channels) if args.channels else draw_channels(inst.topology, cfg)
    os.makedirs(args.output_dir, exist_ok=True)
    if args.dump_channels:
        dump_channels(ch, os.path.join(args.output_dir, "channels.txt"))
    if args.dump_surrogate:
        it = cx.initial_iterate(inst, ch)
        solver.dump_program(cx.build_surrogate(it, inst, ch).program, args.dump_surrogate)
    opts = orc.AlgorithmOptions(mode=args.mode, trials=args.trials, adaptive_rho=args.adaptive_rho)
    run_id = args.run_id or f"{cfg.setup}-{cfg.duplex}-s{cfg.seed}"
    trace_dir = args.output_dir if args.mode == "admm" else None
    try:
        res = orc.run_algorithm1(inst, ch, opts, run_id=run_id, trace_dir=trace_dir)
    except orc.RunError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    m = res.metrics
    orc.write_spca_trace(m, os.path.join(args.output_dir, f"trace_{run_id}.csv"))
    res.report.to_csv(os.path.join(args.output_dir, f"rates_{run_id}.csv"))
    failures = orc.check_run(res, inst, ch, opts.spca_tol)
    row = dict(m.summary_row(), invariant_failures=";".join(failures))
    with open(os.path.join(args.output_dir, "summary.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)
    print(f"{run_id}: objective {m.objective:.6g} bits, backlog {m.residual_backlog:.6g}, "
          f"DL {m.sum_rate_dl:.6g}, UL {m.sum_rate_ul:.6g} bits/s/Hz, "
          f"{m.spca_iterations} outer iterations, {m.seconds:.1f} s")
    for f in failures:
        print(f"invariant failed: {f}", file=sys.stderr)
    return 1 if (args.check and failures) else 0


def cmd_sweep(args):
    plan = orc.ExperimentPlan.from_toml(args.plan)
    if args.output_dir:
        plan.output_dir = args.output_dir
    if args.mode:
        plan.mode = args.mode
    result = orc.run_plan(plan, workers=args.workers)
    failed = [m for m in result.runs.values() if m.error]
    print(f"{len(result.runs)} runs, {len(failed)} failed; output in {plan.output_dir}")
    bad = False
    for m in failed:
        print(f"run failed: {m.run_id}: {m.error}", file=sys.stderr)
    for run_id, msgs in result.failures.items():
        for msg in msgs:
            print(f"invariant failed: {run_id}: {msg}", file=sys.stderr)
            bad = True
    for name, ok in orc.trend_checks(result).items():
        print(f"trend {name}: {'PASS' if ok else 'FAIL'}")
        bad |= not ok
    return 1 if (args.check and (bad or failed)) else 0


def cmd_solve_dump(args):
    prog = solver.load_program(args.program)
    x0 = np.load(args.x0) if args.x0 else None
    sol = solver.solve(prog, tol=args.tol, x0=x0)
    print(f"status {sol.status.value}")
    print(f"objective {sol.objective:.12g}")
    print(f"iterations {sol.iterations}, final mu {sol.mu:g}")
    for k, v in sol.kkt.items():
        print(f"kkt {k} {v:.3g}")
    if sol.message:
        print(sol.message)
    if args.x_out and sol.x is not None:
        np.save(args.x_out, sol.x)
    return 0 if sol.ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="fdcells", description="Queue-aware multicell scheduling runs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("--config", help="scenario TOML (default: desk-scale scenario)")
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=orc.MODES, default="centralized")
    r.add_argument("--setup", choices=SETUPS)
    r.add_argument("--duplex", choices=DUPLEX)
    r.add_argument("--eh-ratio", type=float, help="normalized energy arrival rate")
    r.add_argument("--alpha", type=float, help="decoding energy coefficient")
    r.add_argument("--num-sbs", type=int)
    r.add_argument("--trials", type=int, default=200, help="randomization candidates")
    r.add_argument("--adaptive-rho", action="store_true")
    r.add_argument("--channels", help="load channels from a dump instead of drawing them")
    r.add_argument("--dump-channels", action="store_true", help="write channels.txt")
    r.add_argument("--dump-surrogate", metavar="PATH", help="write the first convex program")
    r.add_argument("--run-id")
    r.add_argument("-o", "--output-dir", default="results")
    r.add_argument("--check", action="store_true", help="exit 1 if an invariant fails")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run an experiment plan")
    s.add_argument("plan", help="plan TOML")
    s.add_argument("--mode", choices=orc.MODES)
    s.add_argument("-o", "--output-dir")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--check", action="store_true", help="exit 1 on failed runs, invariants or trends")
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("solve-dump", help="solve a dumped convex program")
    d.add_argument("program")
    d.add_argument("--tol", type=float, default=solver.DEFAULT_TOL)
    d.add_argument("--x0", help=".npy starting point")
    d.add_argument("--x-out", help="save the solution vector (.npy)")
    d.set_defaults(func=cmd_solve_dump)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
