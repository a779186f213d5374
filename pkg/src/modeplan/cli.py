"""Scenario runner and benchmark harness.

``modeplan run`` executes parse -> plan -> optional refine and writes
plan.json, run.json, and traj.csv into the output directory. ``modeplan
bench`` sweeps scenarios over seeds and aggregates timing statistics into
one table row per scenario. Exit codes: 0 success, 2 scenario/parse error,
3 no solution within budget (run record still written).
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import io as mio
from .refine import refine_plan
from .scene import Scenario, ScenarioError, parse_scenario
from .search import SearchConfig, plan as run_plan

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_NO_SOLUTION = 3


def _build_config(scenario: Scenario, args) -> SearchConfig:
    cfg = SearchConfig.for_scenario(scenario)
    if args.max_extensions is not None:
        cfg.max_extensions = args.max_extensions
    if args.max_time is not None:
        cfg.max_time = args.max_time
    if args.anytime:
        cfg.anytime = True
        cfg.stop_at_first = False
    elif args.stop_at_first is not None:
        cfg.stop_at_first = args.stop_at_first
    return cfg


def _execute(scenario: Scenario, cfg: SearchConfig, postprocess: bool):
    result = run_plan(scenario, cfg)
    best = result.best_plan()
    refine_info = None
    if best is not None and postprocess:
        refined = refine_plan(best, scenario, cfg)
        refine_info = {
            "merit_before": refined.stitched_merit,
            "merit_after": refined.refined_merit,
            "warning": refined.refine_warning,
        }
        if not refined.refine_warning:
            best = refined
    return result, best, refine_info


def cmd_run(args) -> int:
    try:
        scenario = parse_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    cfg = _build_config(scenario, args)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result, best, refine_info = _execute(scenario, cfg, args.postprocess)
    record = mio.run_record(result, refine_info=refine_info, best_plan=best)
    mio.write_run_record(record, out / "run.json")
    if best is None:
        print(
            f"no solution within budget ({result.stats.termination}); "
            f"record written to {out / 'run.json'}",
            file=sys.stderr,
        )
        return EXIT_NO_SOLUTION
    mio.write_plan(best, out / "plan.json")
    mio.write_traj_csv(best, scenario, out / "traj.csv")
    sol = result.best_solution()
    print(
        f"solved {scenario.name} seed={scenario.seed}: cost={sol.cost:.3f} "
        f"segments={sol.segments} switches={sol.switches} "
        f"extensions={result.stats.extensions_attempted} "
        f"time={result.stats.total_time:.2f}s -> {out}"
    )
    return EXIT_OK


def _bench_cell(payload):
    """One scenario x seed cell; module-level so process pools can pickle it."""
    path, seed, overrides, postprocess = payload
    scenario = replace(parse_scenario(path), seed=seed)
    cfg = SearchConfig.for_scenario(scenario)
    for key, value in overrides.items():
        setattr(cfg, key, value)
    result, best, refine_info = _execute(scenario, cfg, postprocess)
    sol = result.best_solution()
    return {
        "scenario": scenario.name,
        "seed": seed,
        "solved": sol is not None,
        "cost": sol.cost if sol else None,
        "segments": sol.segments if sol else None,
        "switches": sol.switches if sol else None,
        "extensions": result.stats.extensions_attempted,
        "plan_time_s": result.stats.total_time,
        "solve_time_mean_s": result.stats.solve_times.summary()["mean"],
        "refined": refine_info,
    }


def _aggregate(rows: list[dict]) -> dict:
    solved = [r for r in rows if r["solved"]]
    agg = {
        "scenario": rows[0]["scenario"],
        "runs": len(rows),
        "solved": len(solved),
        "deterministic": {
            "costs": [r["cost"] for r in rows],
            "extensions": [r["extensions"] for r in rows],
            "segments": [r["segments"] for r in rows],
        },
    }
    if solved:
        times = [r["plan_time_s"] for r in solved]
        agg["plan_time_s"] = {
            "mean": statistics.fmean(times),
            "min": min(times),
            "max": max(times),
            "std": statistics.pstdev(times) if len(times) > 1 else 0.0,
        }
        per_ext = [r["solve_time_mean_s"] for r in solved if r["solve_time_mean_s"]]
        agg["extension_solve_ms"] = (
            1e3 * statistics.fmean(per_ext) if per_ext else None
        )
    else:
        agg["plan_time_s"] = None
        agg["extension_solve_ms"] = None
    return agg


def cmd_bench(args) -> int:
    overrides = {}
    if args.max_extensions is not None:
        overrides["max_extensions"] = args.max_extensions
    if args.max_time is not None:
        overrides["max_time"] = args.max_time
    cells = []
    for path in args.scenario:
        try:
            parse_scenario(path)
        except ScenarioError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        for i in range(args.seeds):
            cells.append((path, args.seed_base + i, overrides, args.postprocess))

    workers = int(os.environ.get("MODEPLAN_THREADS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_bench_cell, cells))
    else:
        rows = [_bench_cell(c) for c in cells]

    by_scenario: dict[str, list[dict]] = {}
    for row in rows:
        by_scenario.setdefault(row["scenario"], []).append(row)
    table = [_aggregate(v) for v in by_scenario.values()]

    report = {"format": mio.BENCH_FORMAT, "rows": table, "cells": rows}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(report, indent=1))

    header = f"{'scenario':<24} {'solved':>6} {'mean':>8} {'min':>8} {'max':>8} {'std':>8} {'ext ms':>8}"
    print(header)
    print("-" * len(header))
    for row in table:
        solved = f"{row['solved']}/{row['runs']}"
        t = row["plan_time_s"]
        if t is None:
            print(f"{row['scenario']:<24} {solved:>6} {'-':>8} {'-':>8} {'-':>8} {'-':>8} {'-':>8}")
            continue
        ext = row["extension_solve_ms"]
        ext_s = f"{ext:8.1f}" if ext is not None else f"{'-':>8}"
        print(
            f"{row['scenario']:<24} {solved:>6} "
            f"{t['mean']:8.2f} {t['min']:8.2f} {t['max']:8.2f} {t['std']:8.2f} {ext_s}"
        )
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="modeplan",
        description="Multi-contact loco-manipulation planning for planar scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="plan one scenario and write artifacts")
    p_run.add_argument("--scenario", required=True, help="scenario JSON path")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--max-extensions", type=int, default=None)
    p_run.add_argument("--max-time", type=float, default=None)
    p_run.add_argument("--anytime", action="store_true",
                       help="keep improving solutions until the budget runs out")
    p_run.add_argument("--postprocess", action="store_true",
                       help="refine the best plan over the full horizon")
    p_run.add_argument("--out", default="out")
    p_run.add_argument("--stop-at-first", action=argparse.BooleanOptionalAction,
                       default=None)
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="seeded sweep with timing aggregates")
    p_bench.add_argument("--scenario", action="append", required=True,
                         help="scenario JSON path (repeatable)")
    p_bench.add_argument("--seeds", type=int, default=5)
    p_bench.add_argument("--seed-base", type=int, default=0)
    p_bench.add_argument("--max-extensions", type=int, default=None)
    p_bench.add_argument("--max-time", type=float, default=None)
    p_bench.add_argument("--postprocess", action="store_true")
    p_bench.add_argument("--out", default=None)
    p_bench.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
