"""Plan, run-record, and trajectory serialization.

Plans round-trip through JSON exactly: floats are written with full
shortest-roundtrip precision, and mode schedules are rebuilt from the
(contact state, action, duration) triple by the same pure constructor used
during planning.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .contacts import SwitchAction, build_mode_schedule
from .ocp import CompiledProblem, OcpWeights, SegmentDef
from .scene import HybridState, Scenario
from .search import Plan, PlanSegment, PlanResult

PLAN_FORMAT = "modeplan-plan-v1"
RUN_FORMAT = "modeplan-run-v1"
BENCH_FORMAT = "modeplan-bench-v1"


def _state_dict(x: HybridState) -> dict:
    return {
        "base": x.base.tolist(),
        "ee": x.ee.tolist(),
        "ee_heading": x.ee_heading.tolist(),
        "q_o": x.q_o.tolist(),
        "v_o": x.v_o.tolist(),
    }


def _state_from(d: dict) -> HybridState:
    return HybridState(
        base=np.asarray(d["base"], dtype=float),
        ee=np.asarray(d["ee"], dtype=float),
        q_o=np.asarray(d["q_o"], dtype=float),
        v_o=np.asarray(d["v_o"], dtype=float),
        ee_heading=np.asarray(d["ee_heading"], dtype=float),
    )


def plan_to_dict(plan: Plan) -> dict:
    return {
        "format": PLAN_FORMAT,
        "scenario": plan.scenario_name,
        "dt": plan.dt,
        "segment_duration": plan.segment_duration,
        "start": _state_dict(plan.start),
        "goal_reached": plan.goal_reached,
        "refined": plan.refined,
        "refine_warning": plan.refine_warning,
        "total_cost": plan.total_cost,
        "stitched_merit": plan.stitched_merit,
        "refined_merit": plan.refined_merit,
        "segments": [
            {
                "contact_state": list(s.contact_state),
                "action": [s.action.limb, s.action.contact],
                "t_close": s.schedule.t_close,
                "t_open": s.schedule.t_open,
                "base_frozen": s.schedule.base_frozen,
                "refs": s.refs.tolist(),
                "states": s.states.tolist(),
                "inputs": s.inputs.tolist(),
                "cost": s.cost,
                "merit": s.merit,
                "violation": s.violation,
            }
            for s in plan.segments
        ],
    }


def plan_from_dict(d: dict) -> Plan:
    if d.get("format") != PLAN_FORMAT:
        raise ValueError(f"not a {PLAN_FORMAT} document")
    duration = float(d["segment_duration"])
    segments = []
    for s in d["segments"]:
        contact_state = tuple(int(v) for v in s["contact_state"])
        action = SwitchAction(*[int(v) for v in s["action"]])
        segments.append(
            PlanSegment(
                contact_state=contact_state,
                action=action,
                schedule=build_mode_schedule(contact_state, action, duration),
                refs=np.asarray(s["refs"], dtype=float),
                states=np.asarray(s["states"], dtype=float),
                inputs=np.asarray(s["inputs"], dtype=float),
                cost=float(s["cost"]),
                merit=float(s["merit"]),
                violation=float(s["violation"]),
            )
        )
    return Plan(
        scenario_name=d["scenario"],
        dt=float(d["dt"]),
        segment_duration=duration,
        start=_state_from(d["start"]),
        segments=segments,
        total_cost=float(d["total_cost"]),
        goal_reached=bool(d["goal_reached"]),
        refined=bool(d.get("refined", False)),
        refine_warning=bool(d.get("refine_warning", False)),
        stitched_merit=d.get("stitched_merit"),
        refined_merit=d.get("refined_merit"),
    )


def write_plan(plan: Plan, path: str | Path):
    Path(path).write_text(json.dumps(plan_to_dict(plan), indent=1))


def read_plan(path: str | Path) -> Plan:
    return plan_from_dict(json.loads(Path(path).read_text()))


def replay_plan(plan: Plan, scenario: Scenario) -> float:
    """Re-simulate stored inputs segment by segment.

    Returns the maximum absolute state deviation against the recorded
    trajectories (zero up to float round-trip for a well-formed plan file).
    """
    weights = OcpWeights.for_scenario(scenario)
    err = 0.0
    x = plan.start
    for seg in plan.segments:
        comp = CompiledProblem(
            scenario,
            x,
            [SegmentDef(seg.contact_state, seg.action, seg.schedule, seg.refs)],
            weights,
            plan.dt,
        )
        X = comp.rollout(seg.inputs)
        err = max(err, float(np.max(np.abs(X - seg.states))))
        x = HybridState.from_vector(X[-1], comp.layout.n_e, comp.layout.n_o)
    return err


def write_traj_csv(plan: Plan, scenario: Scenario, path: str | Path):
    """Per-step trajectory table.

    Column order (documented contract): t, base_x, base_y, base_yaw,
    ee{i}_x, ee{i}_y per limb, heading{i} per limb, q_o_*, v_o_*,
    f{i}_x, f{i}_y per limb, mode_id. The final row carries zero forces.
    """
    n_e, n_o = scenario.n_e, scenario.n_o
    header = ["t", "base_x", "base_y", "base_yaw"]
    for e in range(n_e):
        header += [f"ee{e + 1}_x", f"ee{e + 1}_y"]
    header += [f"heading{e + 1}" for e in range(n_e)]
    header += [f"q_o_{i + 1}" for i in range(n_o)]
    header += [f"v_o_{i + 1}" for i in range(n_o)]
    for e in range(n_e):
        header += [f"f{e + 1}_x", f"f{e + 1}_y"]
    header.append("mode_id")

    rows = []
    t = 0.0
    for j, seg in enumerate(plan.segments):
        K = len(seg.inputs)
        last_seg = j == len(plan.segments) - 1
        upto = K + 1 if last_seg else K
        for k in range(upto):
            x = seg.states[k]
            if k < K:
                forces = seg.inputs[k, 3 + 3 * n_e :]
            else:
                forces = np.zeros(2 * n_e)
            rows.append(
                [t + k * plan.dt, *x[: 3 + 3 * n_e + 2 * n_o], *forces, j]
            )
        t += plan.segment_duration
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def run_record(
    result: PlanResult,
    refine_info: dict | None = None,
    best_plan: Plan | None = None,
) -> dict:
    """Split run data into a deterministic part and wall-clock timing.

    The deterministic part is bit-identical across runs with the same
    scenario and seed; timings never are, so they live in a separate block.
    """
    stats = result.stats
    solutions = [
        {
            "cost": s.cost,
            "extension_index": s.extension_index,
            "segments": s.segments,
            "switches": s.switches,
        }
        for s in result.solutions
    ]
    deterministic = {
        "scenario": result.scenario.name,
        "seed": result.scenario.seed,
        "solved": bool(result.solutions),
        "solutions": solutions,
        "tree_size": result.tree.size(),
        **stats.deterministic_dict(),
    }
    if best_plan is not None:
        deterministic["plan"] = {
            "segments": len(best_plan.segments),
            "switches": best_plan.n_switches,
            "total_cost": best_plan.total_cost,
            "max_violation": max((s.violation for s in best_plan.segments), default=0.0),
        }
    if refine_info is not None:
        deterministic["refined"] = refine_info
    timing = {
        "total_s": stats.total_time,
        "solve_s": stats.solve_times.summary(),
        "solution_wall_times": [s.wall_time for s in result.solutions],
    }
    return {"format": RUN_FORMAT, "result": deterministic, "timing": timing}


def write_run_record(record: dict, path: str | Path):
    Path(path).write_text(json.dumps(record, indent=1))
