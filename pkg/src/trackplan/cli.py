"""Command-line harness: predict / plan / simulate / bench / validate.

Exit codes: 0 on success, 1 when a simulation ends planner-degraded, 2 for
configuration problems (missing file, schema violation, unwritable output).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .planner import DroneState
from .planner import plan as plan_cycle
from .predictor import NoPredictionError, predict, terminal_variance
from .scenario import ConfigError, load_scenario, validate_scenario
from .sim import World, bench_sweep, run_episode


def _curve_payload(curve) -> dict:
    return {
        "control_points": curve.control_points().tolist(),
        "horizon": curve.horizon,
    }


def _corridor_payload(seq) -> dict:
    return {
        "tau": seq.tau.tolist(),
        "boxes": [
            {"min": p.aabb[0].tolist(), "max": p.aabb[1].tolist()}
            for p in seq.polytopes
        ],
    }


def _load(args) -> tuple:
    scenario = load_scenario(args.scenario, overrides=args.set or [])
    if args.seed is not None:
        from dataclasses import replace

        scenario = replace(scenario, seed=args.seed)
    failures = [r for r in validate_scenario(scenario) if not r.ok]
    if failures:
        for r in failures:
            print(f"invalid scenario: rule {r.rule}: {r.message}", file=sys.stderr)
        raise ConfigError(f"{len(failures)} validation rule(s) failed")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as err:
        raise ConfigError(f"output directory not writable: {err}") from err
    return scenario, out


def _snapshot(scenario):
    world = World(scenario)
    dparams = scenario.predictor_params()
    variance = terminal_variance(dparams, scenario.horizon)
    return world.snapshot(scenario.horizon, variance), dparams


def cmd_predict(args) -> int:
    scenario, out = _load(args)
    snap, dparams = _snapshot(scenario)
    occ = scenario.occupancy_map()
    shapes = scenario.target_shapes()
    payload = {"targets": []}
    for ti, state in enumerate(snap.targets):
        try:
            pred = predict(
                state,
                occ,
                snap.obstacle_curves,
                shapes[ti],
                scenario.horizon,
                dparams,
                np.random.default_rng([scenario.seed, 0, 101 + ti]),
            )
            payload["targets"].append(
                {
                    "curve": _curve_payload(pred.curve),
                    "accepted": pred.sample_count_accepted,
                    "sampled": pred.sample_count_total,
                    "selected_index": pred.selected_index,
                    "corridor": {
                        "min": pred.corridor.aabb[0].tolist(),
                        "max": pred.corridor.aabb[1].tolist(),
                    },
                }
            )
        except NoPredictionError as err:
            payload["targets"].append({"error": str(err), **err.diagnostics})
    (out / "prediction.json").write_text(json.dumps(payload, indent=2))
    print(f"wrote {out / 'prediction.json'}")
    return 0


def cmd_plan(args) -> int:
    scenario, out = _load(args)
    snap, dparams = _snapshot(scenario)
    occ = scenario.occupancy_map()
    shapes = scenario.target_shapes()
    predictions = []
    for ti, state in enumerate(snap.targets):
        predictions.append(
            predict(
                state,
                occ,
                snap.obstacle_curves,
                shapes[ti],
                scenario.horizon,
                dparams,
                np.random.default_rng([scenario.seed, 0, 101 + ti]),
            )
        )
    drone = DroneState.at_rest(scenario.drone_start)
    chase = plan_cycle(
        drone,
        predictions,
        occ,
        snap.obstacle_curves,
        shapes,
        scenario.planner_params(),
        np.random.default_rng([scenario.seed, 0, 202]),
        workers=args.workers,
    )
    payload = {
        "curve": _curve_payload(chase.curve),
        "score": chase.score,
        "degraded": chase.degraded,
        "reused": chase.reused,
        "corridors": [_corridor_payload(c) for c in chase.corridors],
        "diagnostics": chase.diagnostics,
    }
    (out / "plan.json").write_text(json.dumps(payload, indent=2))
    print(f"wrote {out / 'plan.json'}")
    return 1 if chase.degraded else 0


def cmd_simulate(args) -> int:
    scenario, out = _load(args)
    log = run_episode(scenario, workers=args.workers)
    log.to_jsonl(out / "episode.jsonl")
    times = log.compute_times()
    summary = {
        "outcome": log.outcome,
        "seed": log.seed,
        "steps": len(log.steps),
        "cycles": len(log.cycles),
        "metrics": log.metric_summary(),
        "mean_cycle_ms": float(times.mean() * 1e3),
        "max_cycle_ms": float(times.max() * 1e3),
        "digest": log.digest(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    with open(out / "metrics.csv", "w") as fh:
        fh.write("t,chi,phi\n")
        for s in log.steps:
            fh.write(f"{s.t!r},{s.chi!r},{s.phi!r}\n")
    print(f"outcome: {log.outcome}  (chi/phi mins: {log.min_chi:.3f}/{log.min_phi:.3f})")
    print(f"wrote {out / 'episode.jsonl'}, summary.json, metrics.csv")
    return 1 if log.outcome == "planner-degraded" else 0


def cmd_bench(args) -> int:
    scenario, out = _load(args)
    counts = [int(c) for c in args.counts.split(",")]
    report = bench_sweep(scenario, counts, args.episodes, workers=args.workers)
    (out / "bench.json").write_text(json.dumps(report.payload(), indent=2))
    table = report.format_table()
    (out / "bench.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario, overrides=args.set or [])
    except ConfigError as err:
        print(f"FAIL load: {err}", file=sys.stderr)
        return 2
    results = validate_scenario(scenario)
    failed = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        failed += not r.ok
        print(f"{status} {r.rule}: {r.message}")
    return 2 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackplan",
        description="Aerial target tracking with certified Bernstein motion primitives",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out: bool = True):
        p.add_argument("--scenario", required=True, help="scenario YAML path")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override scenario seed")
        p.add_argument("--workers", type=int, default=1, help="worker threads")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a scenario field (repeatable), e.g. planner.d_min=0.4",
        )

    p = sub.add_parser("predict", help="one prediction pass for every target")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plan", help="one planning cycle on the initial snapshot")
    common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run a full closed-loop episode")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="success-rate sweep over obstacle counts")
    common(p)
    p.add_argument("--counts", required=True, help="comma-separated obstacle counts")
    p.add_argument("--episodes", type=int, required=True, help="episodes per count")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate", help="check a scenario file rule by rule")
    common(p, needs_out=False)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
