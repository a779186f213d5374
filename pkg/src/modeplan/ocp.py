"""Mode-conditioned short-horizon trajectory optimization.

Each problem fixes one contact mode per segment; the mode and its schedule
select which residual families are active at which steps. The solver is a
single-shooting Gauss-Newton iteration on a merit function (quadratic costs
plus weighted soft-constraint penalties), so every returned trajectory is
dynamically consistent by construction.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels as kr
from .contacts import (
    STATUS_APPROACHING,
    STATUS_CLOSED,
    STATUS_OPEN,
    STATUS_RETRACTING,
    ContactState,
    ModeSchedule,
    SwitchAction,
)
from .scene import Capsule, Circle, HybridState, Scenario, wrap_angle

TOL_FEAS = 1e-2
STEP_TOL = 1e-6
MERIT_TOL = 1e-8
MAX_ITERS = 50
DEFAULT_DT = 0.1
DEFAULT_HORIZON = 1.2
APPROACH_PEAK = 0.25
SURFACE_MARGIN = 0.05

FAMILY_NAMES = {
    kr.FAM_TRACK: "tracking",
    kr.FAM_REG_STATE: "regularize_state",
    kr.FAM_REG_INPUT: "regularize_input",
    kr.FAM_RELVEL: "relative_velocity",
    kr.FAM_ZERO_FORCE: "zero_force",
    kr.FAM_UNILATERAL: "unilateral",
    kr.FAM_CONE: "friction_cone",
    kr.FAM_TANGENT_FORCE: "tangent_force_zero",
    kr.FAM_MATCH_POINT: "match_position",
    kr.FAM_SURF_TAN: "in_surface_bounds",
    kr.FAM_SURF_NORM: "on_surface_line",
    kr.FAM_HEAD_ALIGN: "heading_align",
    kr.FAM_HEAD_RATE: "heading_rate",
    kr.FAM_APPROACH: "approach_velocity",
    kr.FAM_RETRACT: "retract_velocity",
    kr.FAM_BASE_BOX: "base_box",
    kr.FAM_QO_BOX: "object_q_box",
    kr.FAM_VO_BOX: "object_v_box",
    kr.FAM_VEL_LIM: "velocity_limits",
    kr.FAM_REACH: "reach_disk",
    kr.FAM_COLLISION: "collision",
    kr.FAM_BASE_FROZEN: "base_frozen",
}
FAMILY_IDS = {v: k for k, v in FAMILY_NAMES.items()}


@dataclass(frozen=True)
class Layout:
    """Index bookkeeping for the flat state/input vectors."""

    n_e: int
    n_o: int

    @property
    def nx(self) -> int:
        return 3 + 3 * self.n_e + 2 * self.n_o

    @property
    def nu(self) -> int:
        return 3 + 5 * self.n_e

    def ee_pos(self, e: int) -> slice:
        return slice(3 + 2 * e, 3 + 2 * e + 2)

    def heading(self, e: int) -> int:
        return 3 + 2 * self.n_e + e

    @property
    def q_slice(self) -> slice:
        return slice(3 + 3 * self.n_e, 3 + 3 * self.n_e + self.n_o)

    @property
    def v_slice(self) -> slice:
        i = 3 + 3 * self.n_e + self.n_o
        return slice(i, i + self.n_o)

    def ee_vel(self, e: int) -> slice:
        return slice(3 + 2 * e, 3 + 2 * e + 2)

    def heading_rate(self, e: int) -> int:
        return 3 + 2 * self.n_e + e

    def force(self, e: int) -> slice:
        i = 3 + 3 * self.n_e + 2 * e
        return slice(i, i + 2)


@dataclass
class OcpWeights:
    """Quadratic cost weights and penalty settings.

    Terminal weights equal the running ones (single set of tuning knobs);
    ``rho`` is the merit penalty weight on constraint violations.
    """

    track_base: tuple[float, float, float] = (100.0, 100.0, 100.0)
    track_obj: np.ndarray | None = None  # defaults per object kind
    reg_ee: float = 20.0
    reg_vo: np.ndarray | None = None
    r_base: tuple[float, float, float] = (4.0, 4.0, 4.0)
    r_ee: float = 4.0
    r_heading: float = 1.0
    r_force: float = 0.005
    rho: float = 100.0
    tangent_zero: bool | None = None  # default: on for hinge objects

    @classmethod
    def for_scenario(cls, scenario: Scenario) -> "OcpWeights":
        w = cls(**scenario.ocp_overrides) if scenario.ocp_overrides else cls()
        obj = scenario.obj
        if w.track_obj is None:
            if obj.track_weight is not None:
                w.track_obj = np.asarray(obj.track_weight, dtype=float)
            elif obj.kind == "hinge":
                w.track_obj = np.array([400.0])
            else:
                w.track_obj = np.array([100.0, 100.0, 10.0])
        else:
            w.track_obj = np.asarray(w.track_obj, dtype=float)
        if w.reg_vo is None:
            w.reg_vo = np.array([20.0]) if obj.kind == "hinge" else np.array([10.0, 10.0, 1.0])
        else:
            w.reg_vo = np.asarray(w.reg_vo, dtype=float)
        if w.tangent_zero is None:
            w.tangent_zero = obj.kind == "hinge"
        return w


@dataclass(frozen=True)
class SegmentDef:
    """One mode-invariant segment: contact mode, schedule, tracking reference."""

    contact_state: ContactState
    action: SwitchAction
    schedule: ModeSchedule
    refs: np.ndarray  # (3 + n_o,)


@dataclass(frozen=True)
class OcpProblem:
    """One short-horizon problem extending a node under a fixed mode."""

    x0: HybridState
    contact_state: ContactState
    action: SwitchAction
    schedule: ModeSchedule
    refs: np.ndarray
    scenario: Scenario
    T: float = DEFAULT_HORIZON
    dt: float = DEFAULT_DT
    weights: OcpWeights | None = None

    def __post_init__(self):
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("horizon T must be an integer multiple of dt")

    @property
    def K(self) -> int:
        return int(round(self.T / self.dt))

    def segment(self) -> SegmentDef:
        return SegmentDef(self.contact_state, self.action, self.schedule, self.refs)


@dataclass
class OcpSolution:
    """Solver output; states are the exact rollout of the returned inputs."""

    states: np.ndarray  # (K + 1, nx)
    inputs: np.ndarray  # (K, nu)
    cost: float
    violation: float
    merit: float
    converged: bool
    iterations: int
    layout: Layout
    dt: float
    merit_history: list[float] = field(default_factory=list)
    solve_time: float = 0.0
    family_violation: dict[str, float] = field(default_factory=dict)

    @property
    def x_T(self) -> HybridState:
        return HybridState.from_vector(self.states[-1], self.layout.n_e, self.layout.n_o)


@dataclass(frozen=True)
class ConstraintSpec:
    """Declarative view of one activated residual family."""

    family: str
    kind: str  # "eq" | "ineq" | "cost"
    limb: int | None  # 1-based, None for global families
    steps: tuple[int, int]  # inclusive first/last step index


class CompiledProblem:
    """Kernel-ready tables for a sequence of mode-invariant segments."""

    def __init__(
        self,
        scenario: Scenario,
        x0: HybridState,
        segments: list[SegmentDef],
        weights: OcpWeights,
        dt: float,
        refs_per_step: np.ndarray | None = None,
    ):
        obj = scenario.obj
        robot = scenario.robot
        n_e, n_o = robot.n_e, obj.n_o
        self.layout = Layout(n_e, n_o)
        self.scenario = scenario
        self.weights = weights
        self.dt = float(dt)
        self.segments = segments
        self.x0 = x0.to_vector()

        seg_steps = [int(round(s.schedule.duration / dt)) for s in segments]
        if any(abs(s.schedule.duration / dt - k) > 1e-9 for s, k in zip(segments, seg_steps)):
            raise ValueError("segment durations must be integer multiples of dt")
        K = sum(seg_steps)
        self.K = K
        self.seg_steps = seg_steps

        # Object tables.
        self.obj_kind = 0 if obj.kind == "hinge" else 1
        self.minv = 1.0 / obj.inertia
        self.axis = obj.axis if obj.axis is not None else np.zeros(2)
        self.bpg = obj.bias_position.tanh_gain
        self.bps = obj.bias_position.tanh_scale
        self.bpl = obj.bias_position.linear
        self.bvg = obj.bias_velocity.tanh_gain
        self.bvs = obj.bias_velocity.tanh_scale
        self.bvl = obj.bias_velocity.linear
        self.vert_xy = obj.friction_vertices()
        self.vert_gain = float(obj.vertex_gain)
        self.vert_scale = float(obj.vertex_scale)

        n_c = obj.n_c
        self.c_geom = np.zeros(max(n_c, 1), dtype=np.int64)
        self.c_point = np.zeros((max(n_c, 1), 2))
        self.c_seg = np.zeros((max(n_c, 1), 4))
        self.c_normal = np.zeros((max(n_c, 1), 2))
        self.c_preh = np.zeros(max(n_c, 1), dtype=np.int64)
        for c in obj.contacts:
            i = c.id - 1
            self.c_geom[i] = 0 if c.geometry == "point" else 1
            if c.geometry == "point":
                self.c_point[i] = c.position
            else:
                self.c_seg[i, 0:2] = c.endpoints[0]
                self.c_seg[i, 2:4] = c.endpoints[1]
            self.c_normal[i] = c.normal
            self.c_preh[i] = 1 if c.prehensile else 0

        self.mount = np.array([e.mount_offset for e in robot.end_effectors])
        self.reach = np.array([e.reach_radius for e in robot.end_effectors])
        self.limb_preh = np.array(
            [1 if e.prehensile else 0 for e in robot.end_effectors], dtype=np.int64
        )

        # Per-step schedule tables.
        self.status = np.zeros((K + 1, n_e), dtype=np.int64)
        self.lcontact = np.zeros((K + 1, n_e), dtype=np.int64)
        self.est_mask = np.zeros((K + 1, n_e), dtype=np.int64)
        self.switch_mask = np.zeros((K + 1, n_e), dtype=np.int64)
        self.base_frozen = np.zeros(K, dtype=np.int64)
        self.force_on = np.zeros((K, n_e), dtype=np.int64)
        self.swvel_kind = np.zeros((K, n_e), dtype=np.int64)
        self.swvel_ref = np.zeros((K, n_e))
        self.seg_of_step = np.zeros(K + 1, dtype=np.int64)

        k0 = 0
        for j, (seg, Kj) in enumerate(zip(segments, seg_steps)):
            sch = seg.schedule
            for kk in range(Kj + 1):
                k = k0 + kk
                if kk == Kj and j < len(segments) - 1:
                    continue  # boundary step owned by the next segment
                t = kk * dt
                st = sch.status_at(min(t, sch.duration - 1e-12) if kk == Kj else t)
                self.seg_of_step[k] = j
                for e in range(n_e):
                    self.status[k, e] = st[e]
                    if sch.switching_limb == e + 1:
                        self.switch_mask[k, e] = 1
                        held = (
                            sch.target_contact
                            if sch.target_contact
                            else seg.contact_state[e]
                        )
                        self.lcontact[k, e] = held
                        if sch.target_contact and st[e] == STATUS_CLOSED:
                            self.est_mask[k, e] = 1
                    else:
                        self.lcontact[k, e] = seg.contact_state[e]
            for kk in range(Kj):
                k = k0 + kk
                t = kk * dt
                if sch.base_frozen:
                    self.base_frozen[k] = 1
                for e in range(n_e):
                    st_e = self.status[k, e]
                    if st_e in (STATUS_CLOSED, STATUS_APPROACHING):
                        self.force_on[k, e] = 1
                    if st_e == STATUS_APPROACHING and sch.t_close is not None:
                        tau = (t - (sch.t_close - sch.delta_approach)) / sch.delta_approach
                        self.swvel_kind[k, e] = 1
                        self.swvel_ref[k, e] = _trapezoid(tau)
                    elif st_e == STATUS_RETRACTING and sch.t_open is not None:
                        tau = (t - sch.t_open) / sch.delta_retract
                        self.swvel_kind[k, e] = 2
                        self.swvel_ref[k, e] = -_trapezoid(tau)
            k0 += Kj

        # Tracking references per step.
        self.refs = np.zeros((K + 1, 3 + n_o))
        if refs_per_step is not None:
            if refs_per_step.shape != (K + 1, 3 + n_o):
                raise ValueError("refs_per_step has the wrong shape")
            self.refs[:] = refs_per_step
        else:
            k0 = 0
            for seg, Kj in zip(segments, seg_steps):
                self.refs[k0 : k0 + Kj + 1] = seg.refs
                k0 += Kj

        self.q_track = np.concatenate([np.asarray(weights.track_base), weights.track_obj])
        self.ee_nom = self.mount.copy()
        self.w_reg_ee = float(weights.reg_ee)
        self.w_reg_vo = np.asarray(weights.reg_vo, dtype=float)
        nu = self.layout.nu
        r_diag = np.zeros(nu)
        r_diag[0:3] = weights.r_base
        for e in range(n_e):
            r_diag[self.layout.ee_vel(e)] = weights.r_ee
            r_diag[self.layout.heading_rate(e)] = weights.r_heading
            r_diag[self.layout.force(e)] = weights.r_force
        if np.any(r_diag <= 0.0):
            raise ValueError("input weights must be strictly positive")
        self.r_diag = r_diag
        self.u_nom = np.zeros(nu)

        self.bxy_lo = robot.base_xy_lo
        self.bxy_hi = robot.base_xy_hi
        self.yaw_lo = float(robot.yaw_lo)
        self.yaw_hi = float(robot.yaw_hi)
        self.qo_lo = obj.q_lo
        self.qo_hi = obj.q_hi
        self.vo_lo = obj.v_lo
        self.vo_hi = obj.v_hi
        self.vmax_lin = float(robot.v_max_lin)
        self.vmax_ang = float(robot.v_max_ang)
        self.ee_vmax = float(robot.ee_v_max)
        self.mu_s = float(obj.friction_mu)
        self.tangent_zero_on = 1 if weights.tangent_zero else 0

        self._build_collision_tables(scenario)

        self.fammask = np.ones(kr.N_FAMILIES, dtype=np.int64)
        n_p = len(self.pq_kind)
        per_step = 24 + 5 * n_o + nu + 18 * n_e + n_p
        self.max_rows = (K + 1) * per_step
        self._res = np.zeros(self.max_rows)
        self._raw = np.zeros(self.max_rows)
        self._gx = np.zeros((self.max_rows, self.layout.nx))
        self._gu = np.zeros((self.max_rows, nu))
        self._rstep = np.zeros(self.max_rows, dtype=np.int64)
        self._rfam = np.zeros(self.max_rows, dtype=np.int64)

    def _build_collision_tables(self, scenario: Scenario):
        obj = scenario.obj
        stat_seg = []
        stat_circ = []
        for body in scenario.obstacles:
            if isinstance(body, Capsule):
                stat_seg.append([*body.a, *body.b, body.radius])
            else:
                stat_circ.append([*body.center, body.radius])
        self.stat_seg = np.asarray(stat_seg, dtype=float).reshape(-1, 5)
        self.stat_circ = np.asarray(stat_circ, dtype=float).reshape(-1, 3)
        self.obj_seg = (
            np.stack(obj.collision_segments)
            if obj.collision_segments
            else np.zeros((0, 5))
        )

        margin = scenario.collision_margin
        base_r = scenario.robot.base_radius
        pq_kind, pq_idx, pq_par, pt_kind, pt_idx, p_margin, p_limb = [], [], [], [], [], [], []

        def add(qk, qi, qp, tk, ti, m, limb=-1):
            pq_kind.append(qk)
            pq_idx.append(qi)
            pq_par.append(qp)
            pt_kind.append(tk)
            pt_idx.append(ti)
            p_margin.append(m)
            p_limb.append(limb)

        n_ss = len(self.stat_seg)
        n_sc = len(self.stat_circ)
        n_os = len(self.obj_seg)
        for i in range(n_ss):
            add(0, 0, 0.0, 0, i, base_r + self.stat_seg[i, 4] + margin)
        for i in range(n_sc):
            add(0, 0, 0.0, 1, i, base_r + self.stat_circ[i, 2] + margin)
        for j in range(n_os):
            add(0, 0, 0.0, 2, j, base_r + self.obj_seg[j, 4] + margin)
            for par in (0.0, 0.5, 1.0):
                for i in range(n_ss):
                    add(2, j, par, 0, i, self.obj_seg[j, 4] + self.stat_seg[i, 4] + margin)
                for i in range(n_sc):
                    add(2, j, par, 1, i, self.obj_seg[j, 4] + self.stat_circ[i, 2] + margin)
        for e in range(self.layout.n_e):
            for i in range(n_ss):
                add(1, e, 0.0, 0, i, self.stat_seg[i, 4] + margin, limb=e)
            for i in range(n_sc):
                add(1, e, 0.0, 1, i, self.stat_circ[i, 2] + margin, limb=e)
            for j in range(n_os):
                add(1, e, 0.0, 2, j, self.obj_seg[j, 4], limb=e)

        self.pq_kind = np.asarray(pq_kind, dtype=np.int64)
        self.pq_idx = np.asarray(pq_idx, dtype=np.int64)
        self.pq_par = np.asarray(pq_par, dtype=float)
        self.pt_kind = np.asarray(pt_kind, dtype=np.int64)
        self.pt_idx = np.asarray(pt_idx, dtype=np.int64)
        self.p_margin = np.asarray(p_margin, dtype=float)
        self.p_limb = np.asarray(p_limb, dtype=np.int64)

    # ------------------------------------------------------------------
    def rollout(self, U: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        x0 = self.x0 if x0 is None else x0
        return kr.rollout_kernel(
            x0, U, self.K, self.dt, self.layout.n_e, self.layout.n_o,
            self.obj_kind, self.minv, self.axis,
            self.bpg, self.bps, self.bpl, self.bvg, self.bvs, self.bvl,
            self.vert_xy, self.vert_gain, self.vert_scale,
            self.c_geom, self.c_point, self.lcontact, self.force_on,
        )

    def _residuals(self, X: np.ndarray, U: np.ndarray, want_grad: bool) -> int:
        if want_grad:
            self._gx[:] = 0.0
            self._gu[:] = 0.0
        return kr.residual_kernel(
            X, U, self.K, self.dt, self.layout.n_e, self.layout.n_o,
            self.weights.rho, self.fammask,
            self.obj_kind, self.axis,
            self.c_geom, self.c_point, self.c_seg, self.c_normal, self.c_preh,
            self.mount, self.reach, self.limb_preh,
            self.status, self.lcontact, self.est_mask, self.switch_mask,
            self.base_frozen, self.swvel_kind, self.swvel_ref,
            self.refs, self.q_track, self.ee_nom, self.w_reg_ee, self.w_reg_vo,
            self.r_diag, self.u_nom,
            self.bxy_lo, self.bxy_hi, self.yaw_lo, self.yaw_hi,
            self.qo_lo, self.qo_hi, self.vo_lo, self.vo_hi,
            self.vmax_lin, self.vmax_ang, self.ee_vmax, self.mu_s,
            self.tangent_zero_on,
            self.stat_seg, self.stat_circ, self.obj_seg,
            self.pq_kind, self.pq_idx, self.pq_par, self.pt_kind, self.pt_idx,
            self.p_margin, self.p_limb,
            self._res, self._raw, self._gx, self._gu, self._rstep, self._rfam,
            want_grad,
        )

    def _sums(self, nr: int) -> tuple[float, float, float]:
        res = self._res[:nr]
        raw = self._raw[:nr]
        fam = self._rfam[:nr]
        cost_rows = fam < 3
        cost = float(np.sum(res[cost_rows] ** 2))
        violation = float(np.sum(raw**2))
        merit = cost + self.weights.rho * violation
        return cost, violation, merit

    def evaluate(self, U: np.ndarray, want_grad: bool = False):
        """Cost, violation, merit, and optionally d merit / d inputs."""
        X = self.rollout(U)
        nr = self._residuals(X, U, want_grad)
        cost, violation, merit = self._sums(nr)
        if not want_grad:
            return X, cost, violation, merit, None
        A, B = self._linearize(X, U)
        grad = kr.adjoint_gradient(
            self._res, self._gx, self._gu, self._rstep, nr, A, B, self.K
        )
        return X, cost, violation, merit, grad

    def _linearize(self, X, U):
        return kr.linearize_kernel(
            X, U, self.K, self.dt, self.layout.n_e, self.layout.n_o,
            self.obj_kind, self.minv, self.axis,
            self.bpg, self.bps, self.bpl, self.bvg, self.bvs, self.bvl,
            self.vert_xy, self.vert_gain, self.vert_scale,
            self.c_geom, self.c_point, self.lcontact, self.force_on,
        )

    def family_violation(self, X, U) -> dict[str, float]:
        nr = self._residuals(X, U, False)
        out: dict[str, float] = {}
        for fam_id, name in FAMILY_NAMES.items():
            if fam_id < 3:
                continue
            rows = self._rfam[:nr] == fam_id
            if np.any(rows):
                out[name] = float(np.max(np.abs(self._raw[:nr][rows])))
        return out


def _trapezoid(tau: float, peak: float = APPROACH_PEAK) -> float:
    """Symmetric trapezoidal velocity profile over a unit window."""
    tau = min(max(tau, 0.0), 1.0)
    return peak * min(1.0, min(tau, 1.0 - tau) / 0.25)


def compile_problem(problem: OcpProblem) -> CompiledProblem:
    weights = problem.weights or OcpWeights.for_scenario(problem.scenario)
    return CompiledProblem(
        problem.scenario, problem.x0, [problem.segment()], weights, problem.dt
    )


def build_constraints(
    mode: tuple[ContactState, SwitchAction],
    schedule: ModeSchedule,
    scenario: Scenario,
    dt: float = DEFAULT_DT,
) -> list[ConstraintSpec]:
    """Declarative list of residual families activated by a mode.

    Summarizes the compiled per-step tables into (family, kind, limb, window)
    records; the solver consumes the same tables, so this view is exact.
    """
    s, a = mode
    weights = OcpWeights.for_scenario(scenario)
    refs = np.zeros(3 + scenario.n_o)
    comp = CompiledProblem(
        scenario, scenario.start, [SegmentDef(s, a, schedule, refs)], weights, dt
    )
    K, n_e = comp.K, comp.layout.n_e
    specs: list[ConstraintSpec] = []

    def window(mask) -> tuple[int, int] | None:
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            return None
        return int(idx[0]), int(idx[-1])

    for name, kind in (
        ("tracking", "cost"),
        ("regularize_state", "cost"),
        ("regularize_input", "cost"),
        ("base_box", "ineq"),
        ("object_q_box", "ineq"),
        ("object_v_box", "ineq"),
        ("velocity_limits", "ineq"),
        ("reach_disk", "ineq"),
    ):
        specs.append(ConstraintSpec(name, kind, None, (0, K)))
    if len(comp.pq_kind):
        specs.append(ConstraintSpec("collision", "ineq", None, (1, K)))
    w = window(comp.base_frozen == 1)
    if w:
        specs.append(ConstraintSpec("base_frozen", "eq", None, w))

    for e in range(n_e):
        cid_any = comp.lcontact[:, e].max()
        closed = comp.status[:, e] == STATUS_CLOSED
        open_like = ~closed
        w = window(open_like[:K])
        if w:
            specs.append(ConstraintSpec("zero_force", "eq", e + 1, w))
        if cid_any <= 0:
            continue
        contact = scenario.obj.contacts[int(cid_any) - 1]
        w = window(closed[:K])
        if w:
            specs.append(ConstraintSpec("relative_velocity", "eq", e + 1, w))
            if not contact.prehensile:
                specs.append(ConstraintSpec("unilateral", "ineq", e + 1, w))
                specs.append(ConstraintSpec("friction_cone", "ineq", e + 1, w))
                if comp.tangent_zero_on:
                    specs.append(ConstraintSpec("tangent_force_zero", "eq", e + 1, w))
            else:
                specs.append(ConstraintSpec("heading_rate", "eq", e + 1, w))
        w = window(comp.est_mask[:, e] == 1)
        if w:
            if contact.geometry == "point":
                specs.append(ConstraintSpec("match_position", "eq", e + 1, w))
                if contact.prehensile:
                    specs.append(ConstraintSpec("heading_align", "eq", e + 1, w))
        if contact.geometry == "surface":
            w = window(closed)
            if w:
                specs.append(ConstraintSpec("in_surface_bounds", "ineq", e + 1, w))
                specs.append(ConstraintSpec("on_surface_line", "eq", e + 1, w))
        w = window(comp.swvel_kind[:, e] == 1)
        if w:
            specs.append(ConstraintSpec("approach_velocity", "eq", e + 1, w))
        w = window(comp.swvel_kind[:, e] == 2)
        if w:
            specs.append(ConstraintSpec("retract_velocity", "eq", e + 1, w))
    return specs


def evaluate_merit(
    problem: OcpProblem | CompiledProblem, U: np.ndarray
) -> tuple[float, float, float, np.ndarray]:
    """Merit decomposition and its gradient w.r.t. the stacked inputs."""
    comp = compile_problem(problem) if isinstance(problem, OcpProblem) else problem
    _, cost, violation, merit, grad = comp.evaluate(U, want_grad=True)
    return cost, violation, merit, grad.reshape(comp.K, comp.layout.nu)


def solve_compiled(
    comp: CompiledProblem,
    init_guess: np.ndarray | None = None,
    max_iters: int = MAX_ITERS,
) -> OcpSolution:
    """Gauss-Newton with backtracking line search on the merit function."""
    t_start = time.perf_counter()
    K, nu = comp.K, comp.layout.nu
    U = np.zeros((K, nu)) if init_guess is None else np.array(init_guess, dtype=float)
    X = comp.rollout(U)
    nr = comp._residuals(X, U, True)
    cost, violation, merit = comp._sums(nr)
    history = [merit]
    iters = 0
    for _ in range(max_iters):
        iters += 1
        A, B = comp._linearize(X, U)
        S = kr.sensitivity_kernel(A, B, K)
        J = kr.assemble_jacobian(comp._gx, comp._gu, comp._rstep, nr, S, K, nu)
        res = comp._res[:nr]
        g = J.T @ res
        G = J.T @ J
        lm = 1e-8 * (1.0 + float(np.max(np.diag(G))))
        step = None
        for _ in range(4):
            try:
                step = np.linalg.solve(G + lm * np.eye(G.shape[0]), -g)
                break
            except np.linalg.LinAlgError:
                lm *= 100.0
        if step is None:
            break
        step_norm = float(np.linalg.norm(step))
        if step_norm < STEP_TOL:
            break
        slope = float(g @ step)
        alpha = 1.0
        accepted = False
        while alpha > 1e-6:
            U_try = U + alpha * step.reshape(K, nu)
            X_try = comp.rollout(U_try)
            nr_try = comp._residuals(X_try, U_try, False)
            c_try, v_try, m_try = comp._sums(nr_try)
            if m_try <= merit + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        assert m_try <= merit + 1e-12, "merit increased across an accepted step"
        decrease = merit - m_try
        U, X = U_try, X_try
        cost, violation, merit = c_try, v_try, m_try
        history.append(merit)
        nr = comp._residuals(X, U, True)
        if decrease < MERIT_TOL:
            break

    sol = OcpSolution(
        states=X,
        inputs=U,
        cost=cost,
        violation=violation,
        merit=merit,
        converged=bool(violation < TOL_FEAS),
        iterations=iters,
        layout=comp.layout,
        dt=comp.dt,
        merit_history=history,
        solve_time=time.perf_counter() - t_start,
    )
    sol.family_violation = comp.family_violation(X, U)
    return sol


def solve_ocp(
    problem: OcpProblem,
    init_guess: np.ndarray | None = None,
    max_iters: int = MAX_ITERS,
) -> OcpSolution:
    """Solve one mode-invariant problem; non-convergence is a result, not an error."""
    return solve_compiled(compile_problem(problem), init_guess, max_iters)


def rollout(problem: OcpProblem, U: np.ndarray) -> np.ndarray:
    """State path produced by applying ``U`` from the problem's start state."""
    return compile_problem(problem).rollout(U)


def check_goal(x: HybridState, scenario: Scenario) -> bool:
    """Terminal-set membership over the selected reference-space coordinates."""
    d = x.ref_projection() - scenario.goal.mu
    d[2] = wrap_angle(d[2])
    sel = d[list(scenario.goal.select)]
    return bool(np.linalg.norm(sel) <= scenario.goal.delta)
