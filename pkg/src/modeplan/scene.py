"""Planar robot/object models, object dynamics, collision geometry, scenario files.

The world is a top-down plane. The robot is a kinematic base (x, y, yaw) with
disk-reachability end-effectors mounted on it. Objects are either a hinged
link (1 DoF) or a free planar body (3 DoF) whose generalized dynamics carry
configurable recoil/friction bias terms. All lengths are meters, angles
radians, forces newtons.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .contacts import ContactState, RuleConfig

TWO_PI = 2.0 * math.pi


class ScenarioError(ValueError):
    """Scenario file failed schema validation or an invariant check."""


def rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def perp(v: np.ndarray) -> np.ndarray:
    """Rotate a 2-vector by +90 degrees."""
    return np.array([-v[1], v[0]])


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    return a - TWO_PI * math.floor((a + math.pi) / TWO_PI)


# ---------------------------------------------------------------------------
# Specs


@dataclass(frozen=True)
class EndEffectorSpec:
    """One robot limb: a point end-effector riding the base.

    ``mount_offset`` is expressed in the base frame; the limb can reach any
    point within ``reach_radius`` of its mount point.
    """

    id: int
    kind: str  # "arm" | "foot"
    prehensile: bool
    mount_offset: np.ndarray
    reach_radius: float

    def __post_init__(self):
        if self.kind not in ("arm", "foot"):
            raise ScenarioError(f"EndEffectorSpec {self.id}: kind must be arm or foot")
        if self.reach_radius <= 0.0:
            raise ScenarioError(
                f"EndEffectorSpec {self.id}: invariant reach_radius > 0 violated"
            )


@dataclass(frozen=True)
class ObjectContactSpec:
    """A user-specified affordance on the object.

    Point contacts carry a single object-frame position; surface contacts a
    segment. ``normal`` is the admissible pushing direction in the object
    frame. ``lever_link`` names the object DoF the contact acts on (always 0
    for hinged objects).
    """

    id: int
    geometry: str  # "point" | "surface"
    prehensile: bool
    normal: np.ndarray
    position: np.ndarray | None = None
    endpoints: np.ndarray | None = None  # (2, 2) for surfaces
    lever_link: int = 0

    def __post_init__(self):
        if self.geometry not in ("point", "surface"):
            raise ScenarioError(f"ObjectContactSpec {self.id}: bad geometry")
        if self.geometry == "surface" and self.prehensile:
            raise ScenarioError(
                f"ObjectContactSpec {self.id}: invariant violated: "
                "surface contacts are never prehensile"
            )
        if self.geometry == "point" and self.position is None:
            raise ScenarioError(f"ObjectContactSpec {self.id}: point needs position")
        if self.geometry == "surface" and self.endpoints is None:
            raise ScenarioError(f"ObjectContactSpec {self.id}: surface needs endpoints")
        n = float(np.linalg.norm(self.normal))
        if not 0.9 < n < 1.1:
            raise ScenarioError(
                f"ObjectContactSpec {self.id}: invariant violated: normal must be unit"
            )
        self.normal[:] = self.normal / n


@dataclass(frozen=True)
class RobotSpec:
    base_xy_lo: np.ndarray
    base_xy_hi: np.ndarray
    yaw_lo: float
    yaw_hi: float
    v_max_lin: float
    v_max_ang: float
    ee_v_max: float
    base_radius: float
    end_effectors: tuple[EndEffectorSpec, ...]

    def __post_init__(self):
        if self.v_max_lin <= 0 or self.v_max_ang <= 0 or self.ee_v_max <= 0:
            raise ScenarioError("RobotSpec: invariant violated: v_max components > 0")
        bounds = np.concatenate(
            [self.base_xy_lo, self.base_xy_hi, [self.yaw_lo, self.yaw_hi]]
        )
        if not np.all(np.isfinite(bounds)):
            raise ScenarioError("RobotSpec: invariant violated: all bounds finite")
        ids = [e.id for e in self.end_effectors]
        if ids != list(range(1, len(ids) + 1)):
            raise ScenarioError(
                "RobotSpec: invariant violated: end-effector ids must be 1..n_e"
            )

    @property
    def n_e(self) -> int:
        return len(self.end_effectors)

    def mount_world(self, base: np.ndarray, e: int) -> np.ndarray:
        """World mount point of limb ``e`` (0-based) for base pose (x, y, yaw)."""
        return base[:2] + rot(base[2]) @ self.end_effectors[e].mount_offset


@dataclass(frozen=True)
class BiasTerm:
    """One generalized bias component: gain*tanh(scale*z) + linear*z per DoF."""

    tanh_gain: np.ndarray
    tanh_scale: np.ndarray
    linear: np.ndarray


@dataclass(frozen=True)
class ObjectSpec:
    """Manipulated object model: inertia, bias effects, affordances, geometry.

    ``kind`` is "hinge" (1 DoF rotation about ``axis``) or "planar_free"
    (x, y, yaw). ``bias_position``/``bias_velocity`` give recoil and damping
    per DoF; planar-free objects optionally add a four-vertex tanh ground
    friction patch over ``footprint``.
    """

    kind: str
    mass: float
    inertia: np.ndarray  # generalized mass matrix diagonal, length n_o
    bias_position: BiasTerm
    bias_velocity: BiasTerm
    q_lo: np.ndarray
    q_hi: np.ndarray
    v_lo: np.ndarray
    v_hi: np.ndarray
    friction_mu: float
    contacts: tuple[ObjectContactSpec, ...]
    collision_segments: tuple[np.ndarray, ...]  # each (5,): ax, ay, bx, by, radius
    axis: np.ndarray | None = None  # hinge only
    link_length: float = 0.0  # hinge only
    footprint: np.ndarray | None = None  # planar_free only, (w, h)
    vertex_gain: float = 0.0
    vertex_scale: float = 0.0
    track_weight: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("hinge", "planar_free"):
            raise ScenarioError("ObjectSpec: kind must be hinge or planar_free")
        if np.any(self.inertia <= 0.0):
            raise ScenarioError(
                "ObjectSpec: invariant violated: inertia symmetric positive definite"
            )
        if self.friction_mu <= 0.0:
            raise ScenarioError("ObjectSpec: invariant violated: friction_mu > 0")
        ids = [c.id for c in self.contacts]
        if ids != list(range(1, len(ids) + 1)):
            raise ScenarioError("ObjectSpec: invariant violated: contact ids 1..n_c")

    @property
    def n_o(self) -> int:
        return 1 if self.kind == "hinge" else 3

    @property
    def n_c(self) -> int:
        return len(self.contacts)

    def friction_vertices(self) -> np.ndarray:
        """Object-frame positions of the ground-friction patch vertices."""
        if self.kind != "planar_free" or self.footprint is None:
            return np.zeros((0, 2))
        w, h = 0.5 * self.footprint[0], 0.5 * self.footprint[1]
        return np.array([[w, h], [w, -h], [-w, -h], [-w, h]])


@dataclass
class HybridState:
    """Continuous robot/object state: base pose, limb positions, object state.

    ``ee_heading`` carries the planar gripper heading per limb; it only
    matters for prehensile interactions and defaults to zero elsewhere.
    """

    base: np.ndarray  # (3,) x, y, yaw
    ee: np.ndarray  # (n_e, 2) world positions
    q_o: np.ndarray  # (n_o,)
    v_o: np.ndarray  # (n_o,)
    ee_heading: np.ndarray | None = None

    def __post_init__(self):
        if self.ee_heading is None:
            self.ee_heading = np.zeros(len(self.ee))

    @property
    def n_e(self) -> int:
        return len(self.ee)

    @property
    def n_o(self) -> int:
        return len(self.q_o)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.base, self.ee.ravel(), self.ee_heading, self.q_o, self.v_o]
        )

    @classmethod
    def from_vector(cls, x: np.ndarray, n_e: int, n_o: int) -> "HybridState":
        base = x[0:3].copy()
        ee = x[3 : 3 + 2 * n_e].reshape(n_e, 2).copy()
        heading = x[3 + 2 * n_e : 3 + 3 * n_e].copy()
        q_o = x[3 + 3 * n_e : 3 + 3 * n_e + n_o].copy()
        v_o = x[3 + 3 * n_e + n_o :].copy()
        return cls(base=base, ee=ee, q_o=q_o, v_o=v_o, ee_heading=heading)

    def ref_projection(self) -> np.ndarray:
        """Project onto the reference space (base 2D pose, object coordinates)."""
        return np.concatenate([self.base, self.q_o])

    def copy(self) -> "HybridState":
        return HybridState(
            self.base.copy(),
            self.ee.copy(),
            self.q_o.copy(),
            self.v_o.copy(),
            self.ee_heading.copy(),
        )


@dataclass(frozen=True)
class GoalSpec:
    """Terminal set: selected reference-space coordinates within ``delta`` of ``mu``."""

    mu: np.ndarray  # (3 + n_o,)
    sigma: np.ndarray  # diagonal covariance, (3 + n_o,)
    select: tuple[int, ...]
    delta: float

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ScenarioError("GoalSpec: invariant violated: delta > 0")
        if np.any(self.sigma < 0.0):
            raise ScenarioError("GoalSpec: invariant violated: sigma nonnegative")
        if any(i < 0 or i >= len(self.mu) for i in self.select):
            raise ScenarioError("GoalSpec: invariant violated: select indices valid")


# ---------------------------------------------------------------------------
# Collision geometry


@dataclass(frozen=True)
class Circle:
    center: np.ndarray
    radius: float


@dataclass(frozen=True)
class Capsule:
    a: np.ndarray
    b: np.ndarray
    radius: float


Body = Circle | Capsule


def _seg_point_distance(a, b, p) -> float:
    d = b - a
    denom = float(d @ d)
    if denom < 1e-16:
        return float(np.linalg.norm(p - a))
    t = min(1.0, max(0.0, float((p - a) @ d) / denom))
    return float(np.linalg.norm(p - (a + t * d)))


def _segments_intersect(a1, b1, a2, b2) -> bool:
    def orient(p, q, r):
        v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        return 0 if abs(v) < 1e-14 else (1 if v > 0 else -1)

    o1 = orient(a1, b1, a2)
    o2 = orient(a1, b1, b2)
    o3 = orient(a2, b2, a1)
    o4 = orient(a2, b2, b1)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def body_distance(ba: Body, bb: Body) -> float:
    """Signed distance between two primitive bodies; negative iff penetrating."""
    if isinstance(ba, Circle) and isinstance(bb, Circle):
        return float(np.linalg.norm(ba.center - bb.center)) - ba.radius - bb.radius
    if isinstance(ba, Circle) and isinstance(bb, Capsule):
        return _seg_point_distance(bb.a, bb.b, ba.center) - ba.radius - bb.radius
    if isinstance(ba, Capsule) and isinstance(bb, Circle):
        return body_distance(bb, ba)
    assert isinstance(ba, Capsule) and isinstance(bb, Capsule)
    d = min(
        _seg_point_distance(bb.a, bb.b, ba.a),
        _seg_point_distance(bb.a, bb.b, ba.b),
        _seg_point_distance(ba.a, ba.b, bb.a),
        _seg_point_distance(ba.a, ba.b, bb.b),
    )
    if _segments_intersect(ba.a, ba.b, bb.a, bb.b):
        # Crossing segments: depth is the cheapest slide past an endpoint.
        return -d - ba.radius - bb.radius
    return d - ba.radius - bb.radius


# ---------------------------------------------------------------------------
# Scenario


@dataclass(frozen=True)
class Scenario:
    """Fully validated, immutable description of one planning task."""

    name: str
    robot: RobotSpec
    obj: ObjectSpec
    obstacles: tuple[Body, ...]
    start: HybridState
    start_contacts: ContactState
    goal: GoalSpec
    sample_lo: np.ndarray  # (3 + n_o,)
    sample_hi: np.ndarray
    rules: RuleConfig
    seed: int = 0
    collision_margin: float = 0.0
    search_overrides: dict = field(default_factory=dict)
    ocp_overrides: dict = field(default_factory=dict)

    @property
    def n_e(self) -> int:
        return self.robot.n_e

    @property
    def n_o(self) -> int:
        return self.obj.n_o

    def ref_v_max(self) -> np.ndarray:
        """Per-coordinate velocity caps over the reference space."""
        obj_v = np.maximum(np.abs(self.obj.v_lo), np.abs(self.obj.v_hi))
        return np.concatenate(
            [[self.robot.v_max_lin, self.robot.v_max_lin, self.robot.v_max_ang], obj_v]
        )


# ---------------------------------------------------------------------------
# Object dynamics


def _bias_term(term: BiasTerm, z: np.ndarray) -> np.ndarray:
    return term.tanh_gain * np.tanh(term.tanh_scale * z) + term.linear * z


def object_bias(obj: ObjectSpec, q_o: np.ndarray, v_o: np.ndarray) -> np.ndarray:
    """Generalized bias forces b(q) + b(v): recoil, damping, ground friction.

    The bias opposes motion when subtracted in the flow map; the four-vertex
    tanh patch of planar-free objects sums per-vertex friction wrenches.
    """
    b = _bias_term(obj.bias_position, np.asarray(q_o, dtype=float)) + _bias_term(
        obj.bias_velocity, np.asarray(v_o, dtype=float)
    )
    if obj.kind == "planar_free" and obj.vertex_gain > 0.0:
        theta = q_o[2]
        omega = v_o[2]
        R = rot(theta)
        for r_local in obj.friction_vertices():
            r = R @ r_local
            v_pt = v_o[:2] + omega * perp(r)
            f = obj.vertex_gain * np.tanh(obj.vertex_scale * v_pt)
            b[:2] += f
            b[2] += r[0] * f[1] - r[1] * f[0]
    return b


@dataclass(frozen=True)
class ContactFrame:
    point: np.ndarray  # world contact point
    normal: np.ndarray  # world pushing direction (unit)
    tangent: np.ndarray  # world tangent (unit)
    jacobian: np.ndarray  # (2, n_o): generalized velocity -> point velocity


def contact_kinematics(
    obj: ObjectSpec,
    contact: ObjectContactSpec,
    q_o: np.ndarray,
    surface_param: float | None = None,
) -> ContactFrame:
    """World-frame contact point, normal/tangent, and point Jacobian.

    For surface contacts ``surface_param`` in [0, 1] picks the point along
    the segment.
    """
    if contact.geometry == "surface":
        if surface_param is None:
            surface_param = 0.5
        if not 0.0 <= surface_param <= 1.0:
            raise ValueError("surface_param must lie in [0, 1]")
        p_local = (1.0 - surface_param) * contact.endpoints[0] + surface_param * contact.endpoints[1]
    else:
        p_local = contact.position
    if obj.kind == "hinge":
        R = rot(q_o[0])
        point = obj.axis + R @ p_local
        normal = R @ contact.normal
        jac = perp(point - obj.axis).reshape(2, 1)
    else:
        R = rot(q_o[2])
        center = np.asarray(q_o[:2], dtype=float)
        point = center + R @ p_local
        normal = R @ contact.normal
        jac = np.hstack([np.eye(2), perp(point - center).reshape(2, 1)])
    return ContactFrame(point=point, normal=normal, tangent=perp(normal), jacobian=jac)


def object_accel(
    obj: ObjectSpec,
    q_o: np.ndarray,
    v_o: np.ndarray,
    active_forces: Sequence[tuple[ObjectContactSpec, float | None, np.ndarray]],
) -> np.ndarray:
    """Generalized acceleration under contact forces and bias effects."""
    tau = -object_bias(obj, q_o, v_o)
    for contact, surface_param, f in active_forces:
        frame = contact_kinematics(obj, contact, q_o, surface_param)
        tau = tau + frame.jacobian.T @ np.asarray(f, dtype=float)
    return tau / obj.inertia


def object_collision_world(obj: ObjectSpec, q_o: np.ndarray) -> list[Capsule]:
    """Object collision segments placed in the world for configuration ``q_o``."""
    out = []
    if obj.kind == "hinge":
        R = rot(q_o[0])
        origin = obj.axis
    else:
        R = rot(q_o[2])
        origin = np.asarray(q_o[:2], dtype=float)
    for seg in obj.collision_segments:
        a = origin + R @ seg[0:2]
        b = origin + R @ seg[2:4]
        out.append(Capsule(a=a, b=b, radius=float(seg[4])))
    return out


def resolve_body(state: HybridState, scenario: Scenario, ref) -> Body:
    """Resolve a symbolic body reference against the current state.

    Accepted forms: a ``Circle``/``Capsule`` (returned as is), ``"base"``,
    ``("ee", limb_index)``, ``("object_seg", seg_index)``,
    ``("obstacle", index)``.
    """
    if isinstance(ref, (Circle, Capsule)):
        return ref
    if ref == "base":
        return Circle(center=state.base[:2], radius=scenario.robot.base_radius)
    kind, idx = ref
    if kind == "ee":
        return Circle(center=state.ee[idx], radius=0.0)
    if kind == "object_seg":
        return object_collision_world(scenario.obj, state.q_o)[idx]
    if kind == "obstacle":
        return scenario.obstacles[idx]
    raise ValueError(f"unknown body reference {ref!r}")


def signed_distances(state: HybridState, scenario: Scenario, pairs) -> np.ndarray:
    """Exact signed distance per body pair; negative iff penetrating."""
    out = np.empty(len(pairs))
    for i, (ra, rb) in enumerate(pairs):
        out[i] = body_distance(
            resolve_body(state, scenario, ra), resolve_body(state, scenario, rb)
        )
    return out


# ---------------------------------------------------------------------------
# Parsing

_V2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_NUM_ARRAY = {"type": "array", "items": {"type": "number"}}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["robot", "object", "start", "goal"],
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "collision_margin": {"type": "number", "minimum": 0.0},
        "robot": {
            "type": "object",
            "required": ["base_bounds", "v_max_base", "ee_v_max", "base_radius", "end_effectors"],
            "properties": {
                "base_bounds": {
                    "type": "object",
                    "required": ["x", "y", "yaw"],
                    "properties": {"x": _V2, "y": _V2, "yaw": _V2},
                },
                "v_max_base": {
                    "type": "object",
                    "required": ["linear", "angular"],
                    "properties": {
                        "linear": {"type": "number"},
                        "angular": {"type": "number"},
                    },
                },
                "ee_v_max": {"type": "number"},
                "base_radius": {"type": "number", "minimum": 0.0},
                "end_effectors": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["id", "kind", "prehensile", "mount_offset", "reach_radius"],
                        "properties": {
                            "id": {"type": "integer"},
                            "kind": {"enum": ["arm", "foot"]},
                            "prehensile": {"type": "boolean"},
                            "mount_offset": _V2,
                            "reach_radius": {"type": "number"},
                        },
                    },
                },
            },
        },
        "object": {
            "type": "object",
            "required": ["kind", "mass", "contacts"],
            "properties": {
                "kind": {"enum": ["hinge", "planar_free"]},
                "mass": {"type": "number", "exclusiveMinimum": 0.0},
                "inertia": _NUM_ARRAY,
                "axis": _V2,
                "link_length": {"type": "number"},
                "footprint": _V2,
                "friction_mu": {"type": "number"},
                "bias_position": {"type": "object"},
                "bias_velocity": {"type": "object"},
                "vertex_friction": {
                    "type": "object",
                    "properties": {"gain": {"type": "number"}, "scale": {"type": "number"}},
                },
                "q_bounds": {"type": "array", "items": _V2},
                "v_bounds": {"type": "array", "items": _V2},
                "track_weight": _NUM_ARRAY,
                "contacts": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["id", "kind", "prehensile", "normal"],
                        "properties": {
                            "id": {"type": "integer"},
                            "kind": {"enum": ["point", "surface"]},
                            "prehensile": {"type": "boolean"},
                            "normal": _V2,
                            "position": _V2,
                            "endpoints": {"type": "array", "items": _V2, "minItems": 2, "maxItems": 2},
                            "lever_link": {"type": "integer"},
                        },
                    },
                },
                "collision_segments": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["p1", "p2"],
                        "properties": {"p1": _V2, "p2": _V2, "radius": {"type": "number"}},
                    },
                },
            },
        },
        "obstacles": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind"],
                "properties": {
                    "kind": {"enum": ["segment", "circle"]},
                    "p1": _V2,
                    "p2": _V2,
                    "center": _V2,
                    "radius": {"type": "number"},
                },
            },
        },
        "start": {
            "type": "object",
            "required": ["base", "ee", "contact_state", "q_o", "v_o"],
            "properties": {
                "base": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                "ee": {"type": "array", "items": _V2},
                "contact_state": {"type": "array", "items": {"type": "integer"}},
                "q_o": _NUM_ARRAY,
                "v_o": _NUM_ARRAY,
            },
        },
        "goal": {
            "type": "object",
            "required": ["mu"],
            "properties": {
                "mu": _NUM_ARRAY,
                "sigma": _NUM_ARRAY,
                "select": {"type": "array", "items": {"type": "integer"}},
                "delta": {"type": "number"},
            },
        },
        "sampling_bounds": {
            "type": "object",
            "required": ["lower", "upper"],
            "properties": {"lower": _NUM_ARRAY, "upper": _NUM_ARRAY},
        },
        "rules": {
            "type": "object",
            "properties": {
                "forbid_contact_with_free_object": {"type": "boolean"},
                "require_continuous_contact": {"type": "boolean"},
            },
        },
        "search": {"type": "object"},
        "ocp": {"type": "object"},
    },
}

DEFAULT_GOAL_DELTA = 0.15
DEFAULT_FRICTION_MU = 0.7


def _bias_from_dict(d: dict | None, n_o: int) -> BiasTerm:
    d = d or {}

    def arr(key):
        v = d.get(key, 0.0)
        a = np.asarray(v, dtype=float)
        if a.ndim == 0:
            a = np.full(n_o, float(a))
        if len(a) != n_o:
            raise ScenarioError(f"object bias term {key}: expected {n_o} entries")
        return a

    return BiasTerm(tanh_gain=arr("tanh_gain"), tanh_scale=arr("tanh_scale"), linear=arr("linear"))


def _parse_object(d: dict) -> ObjectSpec:
    kind = d["kind"]
    n_o = 1 if kind == "hinge" else 3
    mass = float(d["mass"])
    link_length = float(d.get("link_length", 0.0))
    footprint = np.asarray(d.get("footprint", [0.6, 0.6]), dtype=float)
    if "inertia" in d:
        inertia = np.asarray(d["inertia"], dtype=float)
        if inertia.shape != (n_o,):
            raise ScenarioError(f"object.inertia: expected {n_o} entries")
    elif kind == "hinge":
        if link_length <= 0.0:
            raise ScenarioError("object.link_length: required for hinge objects")
        inertia = np.array([mass * link_length**2 / 3.0])
    else:
        izz = mass * float(footprint @ footprint) / 12.0
        inertia = np.array([mass, mass, izz])
    contacts = []
    for c in d["contacts"]:
        contacts.append(
            ObjectContactSpec(
                id=int(c["id"]),
                geometry=c["kind"],
                prehensile=bool(c["prehensile"]),
                normal=np.asarray(c["normal"], dtype=float),
                position=np.asarray(c["position"], dtype=float) if "position" in c else None,
                endpoints=np.asarray(c["endpoints"], dtype=float) if "endpoints" in c else None,
                lever_link=int(c.get("lever_link", 0)),
            )
        )
    segments = []
    for seg in d.get("collision_segments", []):
        segments.append(
            np.array(
                [*seg["p1"], *seg["p2"], float(seg.get("radius", 0.0))], dtype=float
            )
        )
    q_bounds = d.get("q_bounds")
    v_bounds = d.get("v_bounds")
    q_lo = np.array([b[0] for b in q_bounds]) if q_bounds else np.full(n_o, -10.0)
    q_hi = np.array([b[1] for b in q_bounds]) if q_bounds else np.full(n_o, 10.0)
    v_lo = np.array([b[0] for b in v_bounds]) if v_bounds else np.full(n_o, -1.0)
    v_hi = np.array([b[1] for b in v_bounds]) if v_bounds else np.full(n_o, 1.0)
    if len(q_lo) != n_o or len(v_lo) != n_o:
        raise ScenarioError("object bounds: wrong dimension")
    vert = d.get("vertex_friction", {})
    track = d.get("track_weight")
    return ObjectSpec(
        kind=kind,
        mass=mass,
        inertia=inertia,
        bias_position=_bias_from_dict(d.get("bias_position"), n_o),
        bias_velocity=_bias_from_dict(d.get("bias_velocity"), n_o),
        q_lo=q_lo,
        q_hi=q_hi,
        v_lo=v_lo,
        v_hi=v_hi,
        friction_mu=float(d.get("friction_mu", DEFAULT_FRICTION_MU)),
        contacts=tuple(contacts),
        collision_segments=tuple(segments),
        axis=np.asarray(d["axis"], dtype=float) if "axis" in d else None,
        link_length=link_length,
        footprint=footprint if kind == "planar_free" else None,
        vertex_gain=float(vert.get("gain", 0.0)),
        vertex_scale=float(vert.get("scale", 0.0)),
        track_weight=np.asarray(track, dtype=float) if track is not None else None,
    )


def load_scenario(data: dict, name: str = "scenario") -> Scenario:
    """Validate a scenario dict and build the immutable model objects."""
    try:
        import jsonschema

        jsonschema.validate(data, SCENARIO_SCHEMA)
    except Exception as exc:  # jsonschema.ValidationError carries json_path
        path = getattr(exc, "json_path", None)
        msg = getattr(exc, "message", str(exc))
        raise ScenarioError(f"schema violation at {path or '$'}: {msg}") from exc

    r = data["robot"]
    limbs = tuple(
        EndEffectorSpec(
            id=int(e["id"]),
            kind=e["kind"],
            prehensile=bool(e["prehensile"]),
            mount_offset=np.asarray(e["mount_offset"], dtype=float),
            reach_radius=float(e["reach_radius"]),
        )
        for e in r["end_effectors"]
    )
    robot = RobotSpec(
        base_xy_lo=np.array([r["base_bounds"]["x"][0], r["base_bounds"]["y"][0]]),
        base_xy_hi=np.array([r["base_bounds"]["x"][1], r["base_bounds"]["y"][1]]),
        yaw_lo=float(r["base_bounds"]["yaw"][0]),
        yaw_hi=float(r["base_bounds"]["yaw"][1]),
        v_max_lin=float(r["v_max_base"]["linear"]),
        v_max_ang=float(r["v_max_base"]["angular"]),
        ee_v_max=float(r["ee_v_max"]),
        base_radius=float(r["base_radius"]),
        end_effectors=limbs,
    )
    obj = _parse_object(data["object"])
    if obj.kind == "hinge" and obj.axis is None:
        raise ScenarioError("object.axis: required for hinge objects")

    obstacles: list[Body] = []
    for ob in data.get("obstacles", []):
        if ob["kind"] == "circle":
            obstacles.append(
                Circle(center=np.asarray(ob["center"], dtype=float), radius=float(ob["radius"]))
            )
        else:
            obstacles.append(
                Capsule(
                    a=np.asarray(ob["p1"], dtype=float),
                    b=np.asarray(ob["p2"], dtype=float),
                    radius=float(ob.get("radius", 0.0)),
                )
            )

    s = data["start"]
    n_e, n_o = robot.n_e, obj.n_o
    if len(s["ee"]) != n_e:
        raise ScenarioError("start.ee: one position per end-effector required")
    if len(s["contact_state"]) != n_e:
        raise ScenarioError("start.contact_state: one slot per end-effector required")
    if len(s["q_o"]) != n_o or len(s["v_o"]) != n_o:
        raise ScenarioError(f"start.q_o/v_o: expected {n_o} object coordinates")
    start_contacts: ContactState = tuple(int(v) for v in s["contact_state"])
    if any(v < 0 or v > obj.n_c for v in start_contacts):
        raise ScenarioError("start.contact_state: contact ids out of range")
    point_slots = [
        v for v in start_contacts if v != 0 and obj.contacts[v - 1].geometry == "point"
    ]
    if len(point_slots) != len(set(point_slots)):
        raise ScenarioError(
            "start.contact_state: invariant violated: point contact in two slots"
        )
    start = HybridState(
        base=np.asarray(s["base"], dtype=float),
        ee=np.asarray(s["ee"], dtype=float),
        q_o=np.asarray(s["q_o"], dtype=float),
        v_o=np.asarray(s["v_o"], dtype=float),
    )
    # Limbs starting on a prehensile contact begin aligned with its normal.
    for e, held in enumerate(start_contacts):
        if held != 0:
            contact = obj.contacts[held - 1]
            frame = contact_kinematics(obj, contact, start.q_o)
            if contact.prehensile:
                start.ee_heading[e] = math.atan2(frame.normal[1], frame.normal[0])
            if contact.geometry == "point":
                gap = float(np.linalg.norm(start.ee[e] - frame.point))
                if gap > 1e-3:
                    raise ScenarioError(
                        f"start.ee[{e}]: limb starts closed on point contact "
                        f"{held} but sits {gap:.3f} m away"
                    )
    for e in range(n_e):
        mount = robot.mount_world(start.base, e)
        if np.linalg.norm(start.ee[e] - mount) > limbs[e].reach_radius + 1e-9:
            raise ScenarioError(
                f"start.ee[{e}]: invariant violated: end-effector outside reach disk"
            )

    g = data["goal"]
    mu = np.asarray(g["mu"], dtype=float)
    if len(mu) != 3 + n_o:
        raise ScenarioError(f"goal.mu: expected {3 + n_o} entries")
    sigma = np.asarray(g.get("sigma", np.zeros(3 + n_o)), dtype=float)
    if len(sigma) != 3 + n_o:
        raise ScenarioError(f"goal.sigma: expected {3 + n_o} entries")
    select = tuple(int(i) for i in g.get("select", range(3 + n_o)))
    goal = GoalSpec(mu=mu, sigma=sigma, select=select, delta=float(g.get("delta", DEFAULT_GOAL_DELTA)))

    if "sampling_bounds" in data:
        lo = np.asarray(data["sampling_bounds"]["lower"], dtype=float)
        hi = np.asarray(data["sampling_bounds"]["upper"], dtype=float)
        if len(lo) != 3 + n_o or len(hi) != 3 + n_o:
            raise ScenarioError(f"sampling_bounds: expected {3 + n_o} entries")
    else:
        lo = np.concatenate([robot.base_xy_lo, [robot.yaw_lo], obj.q_lo])
        hi = np.concatenate([robot.base_xy_hi, [robot.yaw_hi], obj.q_hi])

    rules_d = data.get("rules", {})
    rules = RuleConfig(
        forbid_contact_with_free_object=bool(
            rules_d.get("forbid_contact_with_free_object", False)
        ),
        require_continuous_contact=bool(rules_d.get("require_continuous_contact", False)),
    )

    return Scenario(
        name=str(data.get("name", name)),
        robot=robot,
        obj=obj,
        obstacles=tuple(obstacles),
        start=start,
        start_contacts=start_contacts,
        goal=goal,
        sample_lo=lo,
        sample_hi=hi,
        rules=rules,
        seed=int(data.get("seed", 0)),
        collision_margin=float(data.get("collision_margin", 0.0)),
        search_overrides=dict(data.get("search", {})),
        ocp_overrides=dict(data.get("ocp", {})),
    )


def parse_scenario(path: str | Path) -> Scenario:
    """Load, schema-check, and validate a scenario JSON file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON: {exc}") from exc
    return load_scenario(data, name=path.stem)
