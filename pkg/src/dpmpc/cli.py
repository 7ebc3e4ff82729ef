"""``dpmpc`` command line: batch metrics, episode traces and scenario checks."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dpmpc.dynamic.geometry import RobotBelief
from dpmpc.dynamic.mpc import rollout, solve_mpc
from dpmpc.dynamic.target import tracking_reference
from dpmpc.sim.batch import ALL_VARIANTS, format_aggregates, run_batch, write_metrics_csv
from dpmpc.sim.episode import plan_static_for, run_episode
from dpmpc.sim.scenario import UNCERTAINTY_LEVELS, Scenario, ScenarioError, load_scenario, shipped_scenarios
from dpmpc.sim.trace import write_trace_csv
from dpmpc.static_layer import static_plan_report


def _scenario(arg: str) -> Scenario:
    """A path, or the stem of a bundled scenario (``forest``)."""
    p = Path(arg)
    if not p.exists():
        shipped = shipped_scenarios()
        if arg in shipped:
            p = shipped[arg]
        elif p.stem in shipped and p.suffix == ".scn":
            p = shipped[p.stem]
    return load_scenario(p)


def _list(arg: str, choices: Sequence[str]) -> list[str]:
    if arg == "all":
        return list(choices)
    items = [a.strip() for a in arg.split(",") if a.strip()]
    for a in items:
        if a not in choices:
            raise argparse.ArgumentTypeError(f"'{a}' is not one of {', '.join(choices)}")
    return items


def _scales(arg: str) -> list[float]:
    if arg == "all":
        return list(UNCERTAINTY_LEVELS)
    try:
        out = [float(a) for a in arg.split(",") if a.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad uncertainty list '{arg}'") from None
    if not out or any(s <= 0 for s in out):
        raise argparse.ArgumentTypeError("uncertainty scales must be positive")
    return out


def cmd_plan(args: argparse.Namespace) -> int:
    sc = _scenario(args.scenario)
    variants = _list(args.variant, ALL_VARIANTS)
    scales = _scales(args.uncertainty)

    def progress(row) -> None:
        if args.verbose:
            m = row.metrics
            state = "ok" if m.success else (m.reason or "fail")
            print(f"{row.variant:<17} {row.uncertainty:<5g} seed {row.seed:<3} {state}", file=sys.stderr)

    result = run_batch(sc, variants, scales, args.seeds, timing=not args.no_timing, workers=args.workers, progress=progress)
    write_metrics_csv(result, args.out)
    print(format_aggregates(result.aggregates))
    print(f"wrote {len(result.rows)} rows + {len(result.aggregates)} aggregates to {args.out}")
    return 0


def cmd_trace(args: argparse.Namespace) -> int:
    sc = _scenario(args.scenario).with_uncertainty(_scales(args.uncertainty)[0])
    res = run_episode(sc, args.variant, args.seed, record_trace=True)
    write_trace_csv(res.trace, args.out)
    m = res.metrics
    outcome = "success" if m.success else f"failure ({m.reason})"
    print(f"{outcome}: time {m.traj_time:.1f} s, length {m.traj_length:.2f} m, {len(res.trace)} rows -> {args.out}")
    return 0


def _check_lines(sc: Scenario) -> list[tuple[str, bool, str]]:
    out: list[tuple[str, bool, str]] = []
    static = plan_static_for(sc)
    ok = static.trajectory is not None
    out.append(("static plan", ok, static.message))
    if not ok:
        return out
    res = static.result
    out.append(("corridor iterations", res.iterations <= sc.static.max_iterations, f"{res.iterations}"))
    rep = static_plan_report(sc.grid, static.waypoints, res, sc.static, sc.robot_radius)
    out.append(("static collision-free", rep["collisions"] == 0, f"{int(rep['collisions'])} colliding samples"))
    out.append(("continuity <= 1e-6", rep["continuity"] <= 1e-6, f"{rep['continuity']:.2e}"))
    out.append(("waypoints <= 1e-6 m", rep["waypoints"] <= 1e-6, f"{rep['waypoints']:.2e}"))
    out.append(("corridor bound", rep["corridor"] <= 1e-6, f"excess {rep['corridor']:.2e}"))

    traj = static.trajectory
    rb = RobotBelief(sc.start, np.zeros(3), np.zeros(3), sc.robot_covariance, sc.robot_radius)
    ref = tracking_reference(traj, traj.t_start, sc.mpc.horizon, sc.mpc.dt)
    sol = solve_mpc(rb, ref, [], sc.grid, sc.mpc)
    resid = float(np.max(np.abs(rollout(rb.state, sol.controls, sc.mpc.dt) - sol.states)))
    out.append(("mpc dynamics <= 1e-8", resid <= 1e-8, f"{resid:.1e} ({sol.status.value})"))

    a = run_episode(sc, "proposed", 0, static=static).metrics
    b = run_episode(sc, "proposed", 0, static=static).metrics
    out.append(("episode determinism", a == b, "seed 0 rerun"))
    out.append(("success implies goal", (not a.success) or not (a.collision or a.timeout), a.reason or "ok"))
    return out


def cmd_check(args: argparse.Namespace) -> int:
    sc = _scenario(args.scenario)
    print(f"scenario {sc.name}: grid {sc.grid.dims}, {len(sc.boxes)} boxes, {len(sc.obstacles)} obstacles")
    failed = 0
    for name, ok, detail in _check_lines(sc):
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<24} {detail}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpmpc", description="Two-layer planner simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="run a variant x uncertainty x seed batch and write the metrics CSV")
    p.add_argument("--scenario", required=True, help="scenario file or bundled name")
    p.add_argument("--variant", default="all", help="proposed, deterministic, no-temporal-goal, a comma list or 'all'")
    p.add_argument("--uncertainty", default="all", help="scale(s) such as 0.25,1,4 or 'all'")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--no-timing", action="store_true", help="write NaN timing columns (bit-reproducible CSV)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_plan)

    t = sub.add_parser("trace", help="write the per-step trace of one episode")
    t.add_argument("--scenario", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--variant", default="proposed", choices=ALL_VARIANTS)
    t.add_argument("--uncertainty", default="1")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_trace)

    c = sub.add_parser("check", help="run the invariant checks on a scenario")
    c.add_argument("--scenario", required=True)
    c.set_defaults(func=cmd_check)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        ap.error(str(exc))
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
