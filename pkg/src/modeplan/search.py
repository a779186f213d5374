"""Sampling-based bilevel search over contact modes and short trajectories.

The outer loop alternates goal-directed extensions (targets drawn from the
goal distribution, chained from the most recently appended node) with
uniformly random extensions (UCT-balanced subtree choice, nearest node by a
weighted planar metric). Every extension solves one short-horizon problem
per admissible action, keeps candidates in an anytime best-first open set,
and appends the globally cheapest one.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .contacts import (
    ContactState,
    ModeSchedule,
    RuleConfig,
    SwitchAction,
    admissible_actions,
    build_mode_schedule,
    transition,
)
from .ocp import (
    DEFAULT_DT,
    DEFAULT_HORIZON,
    TOL_FEAS,
    CompiledProblem,
    OcpWeights,
    SegmentDef,
    check_goal,
    solve_compiled,
)
from .scene import HybridState, Scenario, wrap_angle

FREE_OBJECT_SPEED = 1e-3


@dataclass
class SearchConfig:
    """Task-independent search hyperparameters plus termination knobs."""

    alpha0: float = 10.0
    alpha_decay: float = 0.8
    alpha_floor: float = 1.0
    max_goal_iters: int = 10
    switch_weight: float = 100.0
    uct_lambda: float = 1000.0
    uct_beta: float = 0.2
    delta_prune: float = 0.2
    prune_decay: float = 0.5
    c1: float = 1.0
    c2: float = 0.1
    c3: float = 1.0
    max_extensions: int = 5000
    max_time: float | None = 120.0
    stop_at_first: bool = True
    anytime: bool = False
    horizon: float = DEFAULT_HORIZON
    dt: float = DEFAULT_DT
    establish_prefilter: bool = True
    reach_slack: float = 0.1
    disable_random_phase: bool = False  # ablation switch
    disabled_rules: tuple[str, ...] = ()  # ablation switch
    refine_iters: int = 200
    track_refine_trajectory: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha_decay < 1.0:
            raise ValueError("alpha decay must lie in (0, 1)")
        if min(self.alpha0, self.alpha_floor, self.uct_lambda, self.uct_beta,
               self.delta_prune, self.switch_weight) <= 0.0:
            raise ValueError("search parameters must be positive")

    @classmethod
    def for_scenario(cls, scenario: Scenario) -> "SearchConfig":
        cfg = cls(**scenario.search_overrides) if scenario.search_overrides else cls()
        if cfg.anytime:
            cfg.stop_at_first = False
        return cfg


# E_average bootstrap before the tree has any edge: one merit-weight unit of
# tolerable residual.
def _default_edge_cost(rho: float = 100.0) -> float:
    return rho * TOL_FEAS


@dataclass
class SegmentRecord:
    """Trajectory of the edge leading into a node."""

    contact_state: ContactState  # state governing the segment (parent state)
    action: SwitchAction
    schedule: ModeSchedule
    refs: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    cost: float
    merit: float
    violation: float


@dataclass
class Node:
    id: int
    parent: int | None
    contact_state: ContactState
    prev_state: ContactState
    action: SwitchAction
    x: HybridState
    edge_cost: float
    cost_to_come: float
    n_segments_est: int
    C: float
    depth: int
    children: int = 0
    pruned: bool = False
    is_solution: bool = False
    segment: SegmentRecord | None = None


@dataclass
class Candidate:
    """Admitted but not yet appended successor."""

    parent: int
    contact_state: ContactState
    prev_state: ContactState
    action: SwitchAction
    x: HybridState
    edge_cost: float
    cost_to_come: float
    n_segments_est: int
    C: float
    segment: SegmentRecord
    invalid: bool = False


class OpenSet:
    """Min-heap over candidate cumulative cost with lazy invalidation."""

    def __init__(self):
        self._heap: list[tuple[float, int, Candidate]] = []
        self._seq = 0
        self.by_parent: dict[int, list[Candidate]] = {}

    def __len__(self) -> int:
        return sum(1 for _, _, c in self._heap if not c.invalid)

    def push(self, cand: Candidate):
        heapq.heappush(self._heap, (cand.C, self._seq, cand))
        self._seq += 1
        self.by_parent.setdefault(cand.parent, []).append(cand)

    def pop_best(self) -> Candidate | None:
        while self._heap:
            _, _, cand = heapq.heappop(self._heap)
            if not cand.invalid:
                self.by_parent.get(cand.parent, []).remove(cand)
                return cand
        return None

    def invalidate_parent(self, parent_id: int):
        for cand in self.by_parent.pop(parent_id, []):
            cand.invalid = True

    def rekey(self):
        """Rebuild the heap after cumulative costs changed."""
        entries = [c for _, _, c in self._heap if not c.invalid]
        self._heap = []
        self._seq = 0
        for c in entries:
            heapq.heappush(self._heap, (c.C, self._seq, c))
            self._seq += 1


@dataclass
class Subtree:
    sid: int
    key: ContactState
    node_ids: list[int] = field(default_factory=list)
    attempts: int = 1  # creation counts as one attempt


class Tree:
    """Search tree plus the per-contact-state subtree index."""

    def __init__(self, root: Node):
        self.nodes: list[Node] = [root]
        self.subtrees: dict[ContactState, Subtree] = {}
        self._subtree_order: list[ContactState] = []
        self._register(root)
        self.last_appended: Node = root
        self.sum_edge_live = 0.0
        self.count_edge_live = 0

    def _register(self, node: Node):
        sub = self.subtrees.get(node.contact_state)
        if sub is None:
            sub = Subtree(sid=len(self.subtrees), key=node.contact_state)
            self.subtrees[node.contact_state] = sub
            self._subtree_order.append(node.contact_state)
        sub.node_ids.append(node.id)

    def append(self, cand: Candidate) -> Node:
        node = Node(
            id=len(self.nodes),
            parent=cand.parent,
            contact_state=cand.contact_state,
            prev_state=cand.prev_state,
            action=cand.action,
            x=cand.x,
            edge_cost=cand.edge_cost,
            cost_to_come=cand.cost_to_come,
            n_segments_est=cand.n_segments_est,
            C=cand.C,
            depth=self.nodes[cand.parent].depth + 1,
            segment=cand.segment,
        )
        self.nodes.append(node)
        self.nodes[cand.parent].children += 1
        self._register(node)
        self.last_appended = node
        self.sum_edge_live += node.edge_cost
        self.count_edge_live += 1
        return node

    def prune(self, node: Node, open_set: OpenSet):
        node.pruned = True
        self.sum_edge_live -= node.edge_cost
        self.count_edge_live -= 1
        open_set.invalidate_parent(node.id)

    def live_nodes(self, key: ContactState):
        sub = self.subtrees[key]
        return [self.nodes[i] for i in sub.node_ids if not self.nodes[i].pruned]

    def size(self) -> int:
        return sum(1 for n in self.nodes if not n.pruned)

    def average_edge_cost(self, default: float) -> float:
        if self.count_edge_live == 0:
            return default
        return self.sum_edge_live / self.count_edge_live


def distance(
    cfg_a: np.ndarray, cfg_b: np.ndarray, c1: float = 1.0, c2: float = 0.1, c3: float = 1.0
) -> float:
    """Weighted planar metric over (base xy, yaw, object coordinates)."""
    a = np.asarray(cfg_a, dtype=float)
    b = np.asarray(cfg_b, dtype=float)
    dxy = math.hypot(b[0] - a[0], b[1] - a[1])
    dyaw = abs(b[2] - a[2]) % (2.0 * math.pi)
    dyaw = min(dyaw, 2.0 * math.pi - dyaw)
    dq = float(np.linalg.norm(b[3:] - a[3:]))
    return c1 * dxy + c2 * dq + c3 * dyaw


def select_subtree(
    entries: list[tuple[int, int, float]], uct_lambda: float, uct_beta: float
) -> int:
    """Pick the subtree id maximizing the soft-min exploitation plus
    exploration bonus; ties break toward the lowest id.

    ``entries`` holds (subtree id, attempt count, lowest cumulative cost).
    """
    if not entries:
        raise ValueError("no subtrees to select from")
    z = sum(math.exp(-c / uct_lambda) for _, _, c in entries)
    total_n = sum(n for _, n, _ in entries)
    best_sid = -1
    best_r = -math.inf
    for sid, n, c in sorted(entries):
        exploit = math.exp(-c / uct_lambda) / (n * z)
        explore = uct_beta * math.sqrt(math.log(total_n) / n)
        r = exploit + explore
        if r > best_r:
            best_r = r
            best_sid = sid
    return best_sid


def make_reference(
    x: HybridState,
    contact_state: ContactState,
    action: SwitchAction,
    schedule: ModeSchedule,
    y: np.ndarray,
    T: float,
    v_max: np.ndarray,
) -> np.ndarray:
    """Tracking reference for one extension toward sampled target ``y``.

    Steps each reference-space coordinate from the node's projection toward
    the target, clamped by the per-coordinate maximum velocity over the
    horizon. Switching segments hold the current projection; segments
    without a closed object contact freeze the object reference; a frozen
    base freezes the base reference.
    """
    r_bar = x.ref_projection()
    if action.is_switch:
        return r_bar.copy()
    r = r_bar.copy()
    d = np.asarray(y, dtype=float) - r_bar
    d[2] = wrap_angle(d[2])
    # Base xy: clamp the velocity magnitude as a 2-vector.
    vxy = d[0:2] / T
    speed = float(np.linalg.norm(vxy))
    if speed > 1e-12:
        r[0:2] = r_bar[0:2] + T * min(speed, v_max[0]) * (vxy / speed)
    r[2] = r_bar[2] + math.copysign(min(abs(d[2]) / T, v_max[2]), d[2]) * T
    for i in range(3, len(r)):
        vi = d[i] / T
        r[i] = r_bar[i] + math.copysign(min(abs(vi), v_max[i]), vi) * T
    if not any(v != 0 for v in contact_state):
        r[3:] = r_bar[3:]
    if schedule.base_frozen:
        r[0:3] = r_bar[0:3]
    return r


def heuristic_segments(
    x: HybridState, scenario: Scenario, v_max: np.ndarray, T: float
) -> int:
    """Segments needed to reach the goal moving freely at maximum velocity."""
    if check_goal(x, scenario):
        return 0
    d = x.ref_projection() - scenario.goal.mu
    d[2] = wrap_angle(d[2])
    n = 0
    for i in scenario.goal.select:
        n = max(n, int(math.ceil(abs(d[i]) / (v_max[i] * T))))
    return max(n, 1)


def heuristic(
    x: HybridState, scenario: Scenario, v_max: np.ndarray, T: float, e_avg: float
) -> float:
    """Inflatable cost-to-go estimate: segment count times average edge cost."""
    return heuristic_segments(x, scenario, v_max, T) * e_avg


@dataclass
class Solution:
    node_id: int
    cost: float
    extension_index: int
    wall_time: float
    segments: int
    switches: int


class _Welford:
    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.min = math.inf
        self.max = -math.inf

    def add(self, v: float):
        self.n += 1
        d = v - self.mean
        self.mean += d / self.n
        self.m2 += d * (v - self.mean)
        self.min = min(self.min, v)
        self.max = max(self.max, v)

    def summary(self) -> dict:
        if self.n == 0:
            return {"n": 0, "mean": None, "min": None, "max": None, "std": None}
        std = math.sqrt(self.m2 / self.n) if self.n > 1 else 0.0
        return {"n": self.n, "mean": self.mean, "min": self.min, "max": self.max, "std": std}


@dataclass
class SearchStats:
    extensions_attempted: int = 0
    extensions_converged: int = 0
    prefiltered_actions: int = 0
    admission_rejected: int = 0
    admission_violations: int = 0
    nodes_appended: int = 0
    nodes_pruned: int = 0
    alpha_trace: list[float] = field(default_factory=list)
    termination: str = ""
    total_time: float = 0.0
    solve_times: _Welford = field(default_factory=_Welford)

    def deterministic_dict(self) -> dict:
        return {
            "extensions_attempted": self.extensions_attempted,
            "extensions_converged": self.extensions_converged,
            "prefiltered_actions": self.prefiltered_actions,
            "admission_rejected": self.admission_rejected,
            "admission_violations": self.admission_violations,
            "nodes_appended": self.nodes_appended,
            "nodes_pruned": self.nodes_pruned,
            "alpha_trace": list(self.alpha_trace),
            "termination": self.termination,
        }


@dataclass
class PlanSegment:
    contact_state: ContactState
    action: SwitchAction
    schedule: ModeSchedule
    refs: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    cost: float
    merit: float
    violation: float


@dataclass
class Plan:
    scenario_name: str
    dt: float
    segment_duration: float
    start: HybridState
    segments: list[PlanSegment]
    total_cost: float
    goal_reached: bool
    refined: bool = False
    refine_warning: bool = False
    stitched_merit: float | None = None
    refined_merit: float | None = None

    @property
    def n_switches(self) -> int:
        return sum(1 for s in self.segments if s.action.is_switch)

    @property
    def duration(self) -> float:
        return self.segment_duration * len(self.segments)


@dataclass
class PlanResult:
    scenario: Scenario
    config: SearchConfig
    solutions: list[Solution]
    tree: Tree
    stats: SearchStats

    def best_solution(self) -> Solution | None:
        return self.solutions[-1] if self.solutions else None

    def best_plan(self) -> Plan | None:
        sol = self.best_solution()
        if sol is None:
            return None
        return extract_sequence(self.tree, sol.node_id, self.scenario, self.config)


def extract_sequence(
    tree: Tree, goal_node_id: int, scenario: Scenario, cfg: SearchConfig
) -> Plan:
    """Root-to-goal path as an ordered list of mode-invariant segments."""
    path: list[Node] = []
    node = tree.nodes[goal_node_id]
    while node.parent is not None:
        path.append(node)
        node = tree.nodes[node.parent]
    path.reverse()
    segments = [
        PlanSegment(
            contact_state=n.segment.contact_state,
            action=n.segment.action,
            schedule=n.segment.schedule,
            refs=n.segment.refs,
            states=n.segment.states,
            inputs=n.segment.inputs,
            cost=n.edge_cost,
            merit=n.segment.merit,
            violation=n.segment.violation,
        )
        for n in path
    ]
    return Plan(
        scenario_name=scenario.name,
        dt=cfg.dt,
        segment_duration=cfg.horizon,
        start=tree.nodes[0].x,
        segments=segments,
        total_cost=tree.nodes[goal_node_id].cost_to_come,
        goal_reached=True,
    )


class Planner:
    """One seeded bilevel search instance over a fixed scenario."""

    def __init__(self, scenario: Scenario, cfg: SearchConfig | None = None,
                 rng: np.random.Generator | int | None = None):
        self.scenario = scenario
        self.cfg = cfg or SearchConfig.for_scenario(scenario)
        seed = scenario.seed if rng is None else rng
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.weights = OcpWeights.for_scenario(scenario)
        self.rules = RuleConfig(
            forbid_contact_with_free_object=scenario.rules.forbid_contact_with_free_object,
            require_continuous_contact=scenario.rules.require_continuous_contact,
            disabled_core_rules=frozenset(self.cfg.disabled_rules),
        )
        self.v_max = scenario.ref_v_max()
        self.alpha = self.cfg.alpha0
        self.best_cost = math.inf
        self.delta_prune = self.cfg.delta_prune
        self.stats = SearchStats()
        self.stats.alpha_trace.append(self.alpha)
        self.solutions: list[Solution] = []
        self.open_set = OpenSet()
        root = Node(
            id=0,
            parent=None,
            contact_state=scenario.start_contacts,
            prev_state=scenario.start_contacts,
            action=SwitchAction(0, 0),
            x=scenario.start,
            edge_cost=0.0,
            cost_to_come=0.0,
            n_segments_est=heuristic_segments(
                scenario.start, scenario, self.v_max, self.cfg.horizon
            ),
            C=0.0,
            depth=0,
        )
        self.tree = Tree(root)
        root.C = self.alpha * root.n_segments_est * self._e_avg()
        self._t0 = time.perf_counter()

    # ------------------------------------------------------------------
    def _e_avg(self) -> float:
        return self.tree.average_edge_cost(_default_edge_cost(self.weights.rho))

    def _elapsed(self) -> float:
        return time.perf_counter() - self._t0

    def _budget_left(self) -> bool:
        if self.stats.extensions_attempted >= self.cfg.max_extensions:
            return False
        if self.cfg.max_time is not None and self._elapsed() >= self.cfg.max_time:
            return False
        return True

    def _object_free(self, node: Node) -> bool:
        no_contact = all(v == 0 for v in node.contact_state)
        return no_contact and float(np.linalg.norm(node.x.v_o)) > FREE_OBJECT_SPEED

    def _reachable_establish(self, node: Node, action: SwitchAction) -> bool:
        """Geometric admissibility of an establishment from a standing base."""
        from .scene import contact_kinematics

        contact = self.scenario.obj.contacts[action.contact - 1]
        mount = self.scenario.robot.mount_world(node.x.base, action.limb - 1)
        reach = self.scenario.robot.end_effectors[action.limb - 1].reach_radius
        limit = reach + self.cfg.reach_slack
        if contact.geometry == "point":
            p = contact_kinematics(self.scenario.obj, contact, node.x.q_o).point
            return float(np.linalg.norm(p - mount)) <= limit
        a = contact_kinematics(self.scenario.obj, contact, node.x.q_o, 0.0).point
        b = contact_kinematics(self.scenario.obj, contact, node.x.q_o, 1.0).point
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom < 1e-12 else min(1.0, max(0.0, float((mount - a) @ ab) / denom))
        return float(np.linalg.norm(mount - (a + t * ab))) <= limit

    def _admissible(self, node: Node, skip_switch: bool) -> list[SwitchAction]:
        actions = admissible_actions(
            node.contact_state,
            node.prev_state,
            self.scenario.robot.end_effectors,
            self.scenario.obj.contacts,
            self.rules,
            object_free=self._object_free(node),
        )
        out = []
        for a in sorted(actions):
            if skip_switch and a.is_switch:
                continue
            if (
                a.is_switch
                and a.contact != 0
                and self.cfg.establish_prefilter
                and not self._reachable_establish(node, a)
            ):
                self.stats.prefiltered_actions += 1
                continue
            out.append(a)
        return out

    def _solve_edge(self, node: Node, action: SwitchAction, y: np.ndarray):
        schedule = build_mode_schedule(node.contact_state, action, self.cfg.horizon)
        refs = make_reference(
            node.x, node.contact_state, action, schedule, y, self.cfg.horizon, self.v_max
        )
        comp = CompiledProblem(
            self.scenario,
            node.x,
            [SegmentDef(node.contact_state, action, schedule, refs)],
            self.weights,
            self.cfg.dt,
        )
        sol = solve_compiled(comp)
        self.stats.extensions_attempted += 1
        self.stats.solve_times.add(sol.solve_time)
        self.tree.subtrees[node.contact_state].attempts += 1
        if not sol.converged:
            return None
        self.stats.extensions_converged += 1
        return schedule, refs, sol

    def generate_successors(self, node: Node, y: np.ndarray, skip_switch: bool) -> Node | None:
        """Solve one problem per admissible action, admit candidates, append
        the cheapest open node. Returns the appended (surviving) node."""
        for action in self._admissible(node, skip_switch):
            if not self._budget_left():
                break
            solved = self._solve_edge(node, action, y)
            if solved is None:
                continue
            schedule, refs, sol = solved
            edge = sol.merit + (self.cfg.switch_weight if action.is_switch else 0.0)
            cost_to_come = node.cost_to_come + edge
            x_t = sol.x_T
            n_seg = heuristic_segments(x_t, self.scenario, self.v_max, self.cfg.horizon)
            c_total = cost_to_come + self.alpha * n_seg * self._e_avg()
            if not c_total < self.best_cost:
                self.stats.admission_rejected += 1
                continue
            self._admit(
                Candidate(
                    parent=node.id,
                    contact_state=transition(node.contact_state, action),
                    prev_state=node.contact_state,
                    action=action,
                    x=x_t,
                    edge_cost=edge,
                    cost_to_come=cost_to_come,
                    n_segments_est=n_seg,
                    C=c_total,
                    segment=SegmentRecord(
                        contact_state=node.contact_state,
                        action=action,
                        schedule=schedule,
                        refs=refs,
                        states=sol.states,
                        inputs=sol.inputs,
                        cost=sol.cost,
                        merit=sol.merit,
                        violation=sol.violation,
                    ),
                )
            )
        cand = self.open_set.pop_best()
        if cand is None:
            return None
        appended = self.tree.append(cand)
        self.stats.nodes_appended += 1
        if not appended.action.is_switch:
            appended = self._prune_neighbors(appended)
        return appended

    def _admit(self, cand: Candidate):
        # Everything entering the open set must beat the incumbent solution.
        if not cand.C < self.best_cost:
            self.stats.admission_violations += 1
            return
        self.open_set.push(cand)

    def _prune_neighbors(self, new_node: Node) -> Node:
        """Keep only the cheapest node in a metric ball around a new leaf."""
        ref = new_node.x.ref_projection()
        group = []
        for n in self.tree.live_nodes(new_node.contact_state):
            if distance(ref, n.x.ref_projection(), self.cfg.c1, self.cfg.c2, self.cfg.c3) <= self.delta_prune:
                group.append(n)
        if len(group) <= 1:
            return new_node
        keeper = min(group, key=lambda n: (n.C, n.id))
        for n in group:
            protected = n.id == 0 or n.children > 0 or n.is_solution or n is keeper
            if not protected:
                self.tree.prune(n, self.open_set)
                self.stats.nodes_pruned += 1
        if new_node.pruned:
            self.tree.last_appended = keeper
            return keeper
        return new_node

    def _recompute_costs(self):
        e_avg = self._e_avg()
        for n in self.tree.nodes:
            if n.pruned:
                continue
            n.C = n.cost_to_come + self.alpha * n.n_segments_est * e_avg
        for cands in self.open_set.by_parent.values():
            for c in cands:
                c.C = c.cost_to_come + self.alpha * c.n_segments_est * e_avg
        self.open_set.rekey()

    def _record_solution(self, node: Node):
        node.is_solution = True
        self.best_cost = node.cost_to_come
        switches = 0
        walk = node
        while walk.parent is not None:
            if walk.action.is_switch:
                switches += 1
            walk = self.tree.nodes[walk.parent]
        self.solutions.append(
            Solution(
                node_id=node.id,
                cost=node.cost_to_come,
                extension_index=self.stats.extensions_attempted,
                wall_time=self._elapsed(),
                segments=node.depth,
                switches=switches,
            )
        )
        self.alpha = max(self.cfg.alpha_floor, self.cfg.alpha_decay * self.alpha)
        self.stats.alpha_trace.append(self.alpha)
        self.delta_prune *= self.cfg.prune_decay
        self._recompute_costs()

    def _draw_goal_sample(self) -> np.ndarray:
        y = self.rng.normal(self.scenario.goal.mu, np.sqrt(self.scenario.goal.sigma))
        return np.clip(y, self.scenario.sample_lo, self.scenario.sample_hi)

    def _draw_uniform_sample(self) -> np.ndarray:
        return self.rng.uniform(self.scenario.sample_lo, self.scenario.sample_hi)

    def _select_random_source(self, y: np.ndarray) -> Node:
        entries = []
        for key, sub in self.tree.subtrees.items():
            live = self.tree.live_nodes(key)
            if not live:
                continue
            c_star = min(n.C for n in live)
            entries.append((sub.sid, sub.attempts, c_star))
        sid = select_subtree(entries, self.cfg.uct_lambda, self.cfg.uct_beta)
        key = self.tree._subtree_order[sid]
        live = self.tree.live_nodes(key)
        return min(
            live,
            key=lambda n: (
                distance(n.x.ref_projection(), y, self.cfg.c1, self.cfg.c2, self.cfg.c3),
                n.id,
            ),
        )

    def run(self) -> PlanResult:
        """Algorithm main loop; returns the solution set and tree statistics."""
        root = self.tree.nodes[0]
        if check_goal(root.x, self.scenario):
            self._record_solution(root)
            if self.cfg.stop_at_first:
                return self._result("first_solution")
        while self._budget_left():
            # Goal-directed phase.
            y = self._draw_goal_sample()
            for it in range(self.cfg.max_goal_iters):
                node = self.tree.last_appended
                if check_goal(node.x, self.scenario):
                    if not node.is_solution and node.cost_to_come < self.best_cost:
                        self._record_solution(node)
                    break
                if not self._budget_left():
                    break
                appended = self.generate_successors(node, y, skip_switch=False)
                if appended is None or len(self.open_set) == 0:
                    # Check the freshly appended node before leaving the phase.
                    tail = self.tree.last_appended
                    if (
                        appended is not None
                        and check_goal(tail.x, self.scenario)
                        and not tail.is_solution
                        and tail.cost_to_come < self.best_cost
                    ):
                        self._record_solution(tail)
                    break
            if self.solutions and self.cfg.stop_at_first:
                return self._result("first_solution")
            if not self._budget_left():
                break
            # Uniformly random phase.
            if not self.cfg.disable_random_phase:
                while self._budget_left():
                    y = self._draw_uniform_sample()
                    source = self._select_random_source(y)
                    appended = self.generate_successors(source, y, skip_switch=True)
                    if appended is not None:
                        if (
                            check_goal(appended.x, self.scenario)
                            and not appended.is_solution
                            and appended.cost_to_come < self.best_cost
                        ):
                            self._record_solution(appended)
                        break
                if self.solutions and self.cfg.stop_at_first:
                    return self._result("first_solution")
        reason = (
            "extensions"
            if self.stats.extensions_attempted >= self.cfg.max_extensions
            else "time"
        )
        return self._result(reason)

    def _result(self, termination: str) -> PlanResult:
        self.stats.termination = termination
        self.stats.total_time = self._elapsed()
        return PlanResult(
            scenario=self.scenario,
            config=self.cfg,
            solutions=list(self.solutions),
            tree=self.tree,
            stats=self.stats,
        )


def plan(
    scenario: Scenario,
    cfg: SearchConfig | None = None,
    rng: np.random.Generator | int | None = None,
) -> PlanResult:
    """Run one seeded bilevel search over a scenario."""
    return Planner(scenario, cfg, rng).run()
