"""Command-line entry point: ``cmpc run | mc | verify | plan``.

Exit status is 0 on success, 1 when a simulation faults or a property check
fails, and 2 for invalid arguments or configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, verify
from .config import load_config
from .reference import plan_duration, plan_trajectory
from .vehicle import ConfigurationError

EXIT_OK, EXIT_FAULT, EXIT_USAGE = 0, 1, 2
CONTROLLERS = ("cmpc", "smpc")


def _controllers(text: str) -> tuple:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [n for n in names if n not in CONTROLLERS]
    if not names or bad:
        raise argparse.ArgumentTypeError(f"controllers must be drawn from {CONTROLLERS}, got {text!r}")
    return names


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cmpc", description="Cascaded vs single-loop MPC tandem-rotor benchmark")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one closed-loop simulation")
    run.add_argument("--controller", choices=CONTROLLERS, default="cmpc")
    run.add_argument("--seed", type=int, default=0, help="scenario seed")
    run.add_argument("--config", type=Path)
    run.add_argument("--out", type=Path, default=Path("out"))
    run.add_argument("--duration", type=float, help="simulated-time cap (s)")
    run.add_argument("--scale", type=float, help="multiplier on every scenario standard deviation")
    run.add_argument("--nominal", action="store_true",
                     help="demo run from a level hover at [5, 0, -0.5] m with every draw at its mean")

    mc = sub.add_parser("mc", help="paired Monte-Carlo benchmark")
    mc.add_argument("--runs", type=_positive_int)
    mc.add_argument("--controllers", type=_controllers)
    mc.add_argument("--seed", type=int)
    mc.add_argument("--workers", type=_positive_int, help="process count (default: CMPC_WORKERS or CPU count)")
    mc.add_argument("--config", type=Path)
    mc.add_argument("--out", type=Path, default=Path("out"))

    ver = sub.add_parser("verify", help="numerical property suites")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--knots", type=_positive_int, default=100, help="random reference knots for the Jacobian suite")

    plan = sub.add_parser("plan", help="write a reference trajectory CSV")
    plan.add_argument("--config", type=Path)
    plan.add_argument("--start", type=float, nargs=3, metavar=("X", "Y", "Z"), default=(-30.0, -5.0, -20.0))
    plan.add_argument("--velocity", type=float, nargs=3, metavar=("VX", "VY", "VZ"), default=(5.0, 0.0, 0.5))
    plan.add_argument("--heading", type=float, default=0.0, help="initial heading (rad)")
    plan.add_argument("--dt", type=float, default=0.1)
    plan.add_argument("--out", type=Path, default=Path("reference.csv"))
    return ap


def _write_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def cmd_run(args) -> int:
    base = load_config(args.config)
    if args.scale is not None:
        base = base.with_(scenario=dataclasses.replace(base.scenario, scale=args.scale))
    if args.duration is not None:
        if args.duration <= 0:
            raise ConfigurationError("--duration must be positive")
        base = base.with_(sim=dataclasses.replace(base.sim, duration=args.duration))
    if args.nominal:
        sc = harness.nominal_scenario(base, args.seed)
        stem = f"{args.controller}_nominal"
    else:
        sc = harness.sample_scenario(args.seed, base)
        stem = f"{args.controller}_seed{args.seed}"
    log = harness.run_scenario(sc, args.controller, base)
    args.out.mkdir(parents=True, exist_ok=True)
    log.to_csv(args.out / f"{stem}.csv")
    summary = {"controller": args.controller, "seed": args.seed, "fault": log.fault,
               "replans": [float(t) for t in log.replans], "solver_faults": len(log.faults),
               "mass_estimate": sc.controller_params.mass, "wind_steady": sc.wind.v_steady.tolist(),
               "gust_W0": sc.wind.W0}
    timing = {"assembly_time": log.assembly_time}
    if log.rows.shape[0]:
        m = harness.compute_metrics(log, base.sim.arrival_radius, base.sim.dwell).to_dict()
        timing["solve_time"] = m.pop("solve_time")
        summary["metrics"] = m
    _write_json(summary, args.out / f"{stem}.json")
    _write_json(timing, args.out / f"{stem}_timing.json")
    status = "fault: " + log.fault if log.fault else "ok"
    print(f"{stem}: {status}; {len(log.rows)} ticks; outputs in {args.out}")
    return EXIT_FAULT if log.fault else EXIT_OK


def cmd_mc(args) -> int:
    base = load_config(args.config)
    res = harness.run_monte_carlo(base, runs=args.runs, controllers=args.controllers, seed=args.seed,
                                  workers=args.workers, out_dir=args.out)
    agg = res.aggregate()
    for c in res.controllers:
        e = agg[c]
        print(f"{c}: reached {res.reached_count(c)}/{len(res.metric_values(c, 'reached'))}, "
              f"median position RMSE {e['rmse_position']['median']}, faults {e['faults']['count']}")
    faults = sum(1 for r in res.records if r["fault"])
    return EXIT_FAULT if faults else EXIT_OK


def cmd_verify(args) -> int:
    checks = verify.run_all(args.seed, args.knots)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAULT


def cmd_plan(args) -> int:
    from .lie import so3_exp
    from .vehicle import VehicleState

    base = load_config(args.config)
    if args.dt <= 0:
        raise ConfigurationError("--dt must be positive")
    ctrl = base.controller
    x0 = VehicleState(so3_exp(np.array([0.0, 0.0, args.heading])), np.array(args.velocity), np.array(args.start),
                      np.zeros(3))
    dur = plan_duration(x0.r, ctrl.target_r, ctrl.cruise_speed, ctrl.min_duration)
    traj = plan_trajectory(x0, (ctrl.target_r, ctrl.target_psi), dur, base.vehicle)
    traj.to_csv(args.out, dt=args.dt)
    print(f"{dur:.2f} s plan written to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    handlers = {"run": cmd_run, "mc": cmd_mc, "verify": cmd_verify, "plan": cmd_plan}
    try:
        return handlers[args.command](args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
