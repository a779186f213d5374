"""Multi-contact loco-manipulation planning for planar robot-object scenes."""

from .contacts import (
    ContactState,
    ModeSchedule,
    RuleConfig,
    SwitchAction,
    admissible_actions,
    build_mode_schedule,
    classify_sets,
    transition,
)
from .ocp import (
    OcpProblem,
    OcpSolution,
    OcpWeights,
    build_constraints,
    check_goal,
    evaluate_merit,
    rollout,
    solve_ocp,
)
from .refine import LongHorizonProblem, refine_plan
from .scene import (
    EndEffectorSpec,
    GoalSpec,
    HybridState,
    ObjectContactSpec,
    ObjectSpec,
    RobotSpec,
    Scenario,
    ScenarioError,
    contact_kinematics,
    object_accel,
    object_bias,
    parse_scenario,
    signed_distances,
)
from .search import (
    Plan,
    PlanResult,
    Planner,
    SearchConfig,
    distance,
    extract_sequence,
    heuristic,
    make_reference,
    plan,
    select_subtree,
)

__version__ = "0.1.0"
