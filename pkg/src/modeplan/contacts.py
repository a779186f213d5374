"""Discrete contact encoding: states, switching actions, rules, mode schedules.

A contact state assigns every end-effector (limb) to an object contact index,
with 0 meaning the limb is open. A switching action ``(limb, contact)`` either
maintains the state (limb 0), breaks the limb's current contact (contact 0),
or establishes a new one. Everything in this module is a pure function over
immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

# A contact state is one slot per limb, each holding an object contact id
# (1-based) or 0 for open.
ContactState = tuple[int, ...]

MAINTAIN_LIMB = 0
BREAK_CONTACT = 0

# Per-limb phase status codes used in mode schedules.
STATUS_OPEN = 0
STATUS_CLOSED = 1
STATUS_APPROACHING = 2
STATUS_RETRACTING = 3

# Rules that shrink the admissible action set. Core rules are always on; the
# two task rules are toggled per scenario. Names describe what each rule
# rejects or requires.
RULE_NO_IMMEDIATE_BREAK = "no_immediate_break"
RULE_SINGLE_LIMB = "single_limb"
RULE_ESTABLISH_FROM_OPEN = "establish_from_open"
RULE_POINT_SINGLE_LIMB = "point_single_limb"
RULE_NO_NONPREHENSILE_GRASP = "no_nonprehensile_grasp"
CORE_RULES = (
    RULE_NO_IMMEDIATE_BREAK,
    RULE_SINGLE_LIMB,
    RULE_ESTABLISH_FROM_OPEN,
    RULE_POINT_SINGLE_LIMB,
    RULE_NO_NONPREHENSILE_GRASP,
)


class SwitchAction(NamedTuple):
    """Contact-switching action: ``limb`` 0 maintains, ``contact`` 0 breaks."""

    limb: int
    contact: int

    @property
    def is_switch(self) -> bool:
        return self.limb != MAINTAIN_LIMB


MAINTAIN = SwitchAction(0, 0)


@dataclass(frozen=True)
class RuleConfig:
    """Task-level toggles on top of the always-on core rules.

    ``disabled_core_rules`` exists for ablation studies only; production
    planning keeps it empty.
    """

    forbid_contact_with_free_object: bool = False
    require_continuous_contact: bool = False
    disabled_core_rules: frozenset[str] = frozenset()

    def core_rule_active(self, rule: str) -> bool:
        return rule not in self.disabled_core_rules


def transition(s: ContactState, a: SwitchAction) -> ContactState:
    """Apply a switching action to a contact state.

    Slot ``a.limb`` is set to ``a.contact``; every other slot is unchanged.
    Limb 0 changes nothing.
    """
    if a.limb == MAINTAIN_LIMB:
        return tuple(s)
    out = list(s)
    out[a.limb - 1] = a.contact
    return tuple(out)


class ContactSets(NamedTuple):
    """Limb index sets induced by a (state, action) pair (1-based limb ids)."""

    s_open: frozenset[int]
    s_object: frozenset[int]
    s_break: frozenset[int]
    s_establish: frozenset[int]
    s_switch: frozenset[int]
    s_active: frozenset[int]


def classify_sets(s: ContactState, a: SwitchAction) -> ContactSets:
    """Partition limbs into open/closed/switching sets for the mode ``(s, a)``.

    A limb is in ``s_object`` if it holds a contact for the whole segment, in
    ``s_break``/``s_establish`` if the action switches it, and ``s_active``
    collects everything that interacts with the object at some point.
    """
    n_e = len(s)
    s_break = set()
    s_establish = set()
    if a.limb != MAINTAIN_LIMB:
        if a.contact == BREAK_CONTACT:
            s_break.add(a.limb)
        else:
            s_establish.add(a.limb)
    s_object = {e for e in range(1, n_e + 1) if s[e - 1] != 0 and e not in s_break}
    s_switch = s_break | s_establish
    s_active = s_switch | s_object
    s_open = {e for e in range(1, n_e + 1) if e not in s_object and e not in s_establish}
    return ContactSets(
        frozenset(s_open),
        frozenset(s_object),
        frozenset(s_break),
        frozenset(s_establish),
        frozenset(s_switch),
        frozenset(s_active),
    )


def admissible_actions(
    s: ContactState,
    s_prev: ContactState,
    end_effectors: Sequence,
    object_contacts: Sequence,
    rules: RuleConfig,
    object_free: bool = False,
) -> set[SwitchAction]:
    """Enumerate actions allowed from ``s`` given the rule set.

    ``s_prev`` is the state before the action that produced ``s``; it is what
    lets the no-immediate-break rule protect a freshly established contact.
    ``end_effectors`` and ``object_contacts`` are the spec sequences indexed
    by 1-based ids (``EndEffectorSpec`` / ``ObjectContactSpec``). The result
    always contains the maintain action ``(0, 0)``.
    """
    n_e = len(s)
    n_c = len(object_contacts)
    actions = {MAINTAIN}
    closed_count = sum(1 for v in s if v != 0)
    for e in range(1, n_e + 1):
        held = s[e - 1]
        # Breaking the current contact of limb e.
        if held != 0:
            freshly_established = s_prev[e - 1] == 0
            blocked = (
                rules.core_rule_active(RULE_NO_IMMEDIATE_BREAK) and freshly_established
            )
            if rules.require_continuous_contact and closed_count == 1:
                blocked = True
            if not blocked:
                actions.add(SwitchAction(e, BREAK_CONTACT))
        # Establishing a new contact with limb e.
        for c in range(1, n_c + 1):
            if rules.core_rule_active(RULE_ESTABLISH_FROM_OPEN) and held != 0:
                continue
            if not rules.core_rule_active(RULE_ESTABLISH_FROM_OPEN) and held == c:
                continue  # no-op either way
            contact = object_contacts[c - 1]
            limb = end_effectors[e - 1]
            if (
                rules.core_rule_active(RULE_POINT_SINGLE_LIMB)
                and contact.geometry == "point"
                and any(s[i] == c for i in range(n_e) if i != e - 1)
            ):
                continue
            if (
                rules.core_rule_active(RULE_NO_NONPREHENSILE_GRASP)
                and contact.prehensile
                and not limb.prehensile
            ):
                continue
            if rules.forbid_contact_with_free_object and object_free:
                continue
            actions.add(SwitchAction(e, c))
    return actions


@dataclass(frozen=True)
class SchedulePhase:
    start: float
    status: tuple[int, ...]  # per-limb status code


@dataclass(frozen=True)
class ModeSchedule:
    """Within-segment contact phases and switching instants for one mode.

    At most one limb changes status across the schedule. ``base_frozen``
    marks segments where the robot stands still while making or breaking a
    contact.
    """

    duration: float
    phases: tuple[SchedulePhase, ...]
    t_close: float | None = None
    t_open: float | None = None
    delta_approach: float = 0.0
    delta_retract: float = 0.0
    base_frozen: bool = False
    switching_limb: int = 0  # 1-based; 0 when the action is non-switching
    target_contact: int = 0  # contact being established, 0 otherwise

    def __post_init__(self):
        times = [p.start for p in self.phases]
        if any(t_next <= t for t, t_next in zip(times, times[1:])):
            raise ValueError("phase start times must be strictly increasing")
        if times and (times[0] < 0.0 or times[-1] >= self.duration):
            raise ValueError("phase start times must lie in [0, duration)")

    def status_at(self, t: float) -> tuple[int, ...]:
        """Per-limb status at time ``t`` within the segment."""
        current = self.phases[0].status
        for phase in self.phases:
            if phase.start <= t:
                current = phase.status
            else:
                break
        return current


# Mid-segment switch instant with fixed approach/retract windows. The switch
# splits the segment evenly between free motion and the constrained maneuver.
SWITCH_WINDOW = 0.3


def build_mode_schedule(s: ContactState, a: SwitchAction, duration: float) -> ModeSchedule:
    """Construct the per-limb phase timeline for a segment running mode ``(s, a)``.

    Non-switching actions yield a single phase. Establishing actions close at
    mid-horizon with an approach window just before; breaking actions open at
    mid-horizon with a retract window just after. Switching segments freeze
    the base.
    """
    if duration <= 0.0:
        raise ValueError("segment duration must be positive")
    base = tuple(STATUS_CLOSED if v != 0 else STATUS_OPEN for v in s)
    if a.limb == MAINTAIN_LIMB:
        return ModeSchedule(duration=duration, phases=(SchedulePhase(0.0, base),))

    t_switch = duration / 2.0
    window = min(SWITCH_WINDOW, t_switch / 2.0)
    e = a.limb - 1

    def with_status(code: int) -> tuple[int, ...]:
        out = list(base)
        out[e] = code
        return tuple(out)

    if a.contact == BREAK_CONTACT:
        phases = (
            SchedulePhase(0.0, with_status(STATUS_CLOSED)),
            SchedulePhase(t_switch, with_status(STATUS_RETRACTING)),
            SchedulePhase(t_switch + window, with_status(STATUS_OPEN)),
        )
        return ModeSchedule(
            duration=duration,
            phases=phases,
            t_open=t_switch,
            delta_retract=window,
            base_frozen=True,
            switching_limb=a.limb,
        )
    phases = (
        SchedulePhase(0.0, with_status(STATUS_OPEN)),
        SchedulePhase(t_switch - window, with_status(STATUS_APPROACHING)),
        SchedulePhase(t_switch, with_status(STATUS_CLOSED)),
    )
    return ModeSchedule(
        duration=duration,
        phases=phases,
        t_close=t_switch,
        delta_approach=window,
        base_frozen=True,
        switching_limb=a.limb,
        target_contact=a.contact,
    )
