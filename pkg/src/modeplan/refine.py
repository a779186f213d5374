"""Long-horizon trajectory refinement over a fixed contact schedule.

The stitched bilevel solution warm-starts one optimization spanning every
segment; the schedule (contact states, actions, switch phases) is frozen and
only the continuous inputs move. By default the stitched trajectory also
serves as the tracking reference, so the warm start scores zero tracking
cost and any accepted step strictly reduces regularization or violations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .ocp import CompiledProblem, OcpWeights, SegmentDef, check_goal
from .scene import HybridState, Scenario
from .search import Plan, PlanSegment, SearchConfig


@dataclass(frozen=True)
class LongHorizonProblem:
    """Whole-plan optimization: fixed schedule, stitched warm start."""

    scenario: Scenario
    segments: list[SegmentDef]
    x0: HybridState
    init_inputs: np.ndarray  # (N * K, nu)
    refs_per_step: np.ndarray | None
    weights: OcpWeights
    dt: float

    def __post_init__(self):
        K = sum(int(round(s.schedule.duration / self.dt)) for s in self.segments)
        if self.init_inputs.shape[0] != K:
            raise ValueError("warm-start inputs must cover the full horizon")

    def compile(self) -> CompiledProblem:
        return CompiledProblem(
            self.scenario,
            self.x0,
            self.segments,
            self.weights,
            dt=self.dt,
            refs_per_step=self.refs_per_step,
        )


def build_long_horizon(
    plan: Plan,
    scenario: Scenario,
    cfg: SearchConfig,
    weights: OcpWeights | None = None,
) -> tuple[CompiledProblem, np.ndarray]:
    """Compile the whole-plan problem and return it with the stitched inputs."""
    weights = weights or OcpWeights.for_scenario(scenario)
    segments = [
        SegmentDef(s.contact_state, s.action, s.schedule, s.refs) for s in plan.segments
    ]
    U0 = np.vstack([s.inputs for s in plan.segments])
    refs_per_step = None
    if cfg.track_refine_trajectory:
        stitched = np.vstack(
            [s.states[:-1] for s in plan.segments] + [plan.segments[-1].states[-1:]]
        )
        n_e, n_o = scenario.n_e, scenario.n_o
        refs_per_step = np.column_stack(
            [stitched[:, 0:3], stitched[:, 3 + 3 * n_e : 3 + 3 * n_e + n_o]]
        )
    problem = LongHorizonProblem(
        scenario=scenario,
        segments=segments,
        x0=plan.start,
        init_inputs=U0,
        refs_per_step=refs_per_step,
        weights=weights,
        dt=plan.dt,
    )
    return problem.compile(), U0


def refine_plan(
    plan: Plan, scenario: Scenario, cfg: SearchConfig | None = None
) -> Plan:
    """Polish the continuous part of a plan; the schedule is preserved.

    Never degrades the warm start: the best-merit iterate is returned, and if
    the refined trajectory leaves the goal set the original plan comes back
    with a warning flag.
    """
    cfg = cfg or SearchConfig.for_scenario(scenario)
    if not plan.segments:
        return replace(plan, refined=True)
    weights = OcpWeights.for_scenario(scenario)
    comp, U0 = build_long_horizon(plan, scenario, cfg, weights)

    _, c0, v0, merit0, _ = comp.evaluate(U0)
    best = {"merit": merit0, "U": U0.copy()}

    def fun(u_flat: np.ndarray):
        U = u_flat.reshape(U0.shape)
        _, _, _, merit, grad = comp.evaluate(U, want_grad=True)
        if merit < best["merit"]:
            best["merit"] = merit
            best["U"] = U.copy()
        return merit, grad

    optimize.minimize(
        fun,
        U0.ravel(),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": cfg.refine_iters, "maxcor": 20},
    )
    U_star = best["U"]
    X_star, cost, violation, merit, _ = comp.evaluate(U_star)

    terminal = HybridState.from_vector(
        X_star[-1], comp.layout.n_e, comp.layout.n_o
    )
    if plan.goal_reached and not check_goal(terminal, scenario):
        return replace(
            plan, refine_warning=True, stitched_merit=merit0, refined_merit=None
        )

    K = int(round(plan.segment_duration / plan.dt))
    new_segments: list[PlanSegment] = []
    total_cost = 0.0
    for j, seg in enumerate(plan.segments):
        states = X_star[j * K : (j + 1) * K + 1].copy()
        inputs = U_star[j * K : (j + 1) * K].copy()
        seg_comp = CompiledProblem(
            scenario,
            HybridState.from_vector(states[0], comp.layout.n_e, comp.layout.n_o),
            [SegmentDef(seg.contact_state, seg.action, seg.schedule, seg.refs)],
            weights,
            plan.dt,
        )
        _, c_j, v_j, m_j, _ = seg_comp.evaluate(inputs)
        edge = m_j + (cfg.switch_weight if seg.action.is_switch else 0.0)
        total_cost += edge
        new_segments.append(
            PlanSegment(
                contact_state=seg.contact_state,
                action=seg.action,
                schedule=seg.schedule,
                refs=seg.refs,
                states=states,
                inputs=inputs,
                cost=edge,
                merit=m_j,
                violation=v_j,
            )
        )
    return Plan(
        scenario_name=plan.scenario_name,
        dt=plan.dt,
        segment_duration=plan.segment_duration,
        start=plan.start,
        segments=new_segments,
        total_cost=total_cost,
        goal_reached=plan.goal_reached,
        refined=True,
        stitched_merit=merit0,
        refined_merit=merit,
    )
