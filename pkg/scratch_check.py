"""Scratch: finite-difference validation of kernel derivatives (not shipped)."""
import os

import numpy as np

if os.environ.get("NO_NUMBA"):
    os.environ["MODEPLAN_NO_NUMBA"] = "1"

from modeplan.contacts import SwitchAction, build_mode_schedule
from modeplan.ocp import CompiledProblem, OcpWeights, SegmentDef
from modeplan.scene import load_scenario

BOX = {
    "name": "scratch_box",
    "robot": {
        "base_bounds": {"x": [-1.0, 4.0], "y": [-2.0, 2.0], "yaw": [-3.2, 3.2]},
        "v_max_base": {"linear": 1.0, "angular": 1.5},
        "ee_v_max": 1.0,
        "base_radius": 0.3,
        "end_effectors": [
            {"id": 1, "kind": "arm", "prehensile": True, "mount_offset": [0.35, 0.0], "reach_radius": 0.55}
        ],
    },
    "object": {
        "kind": "planar_free",
        "mass": 2.0,
        "footprint": [0.6, 0.6],
        "friction_mu": 0.7,
        "vertex_friction": {"gain": 3.4, "scale": 3.4},
        "q_bounds": [[-1.0, 4.0], [-2.0, 2.0], [-3.2, 3.2]],
        "v_bounds": [[-0.6, 0.6], [-0.6, 0.6], [-1.0, 1.0]],
        "contacts": [
            {"id": 1, "kind": "surface", "prehensile": False, "normal": [1.0, 0.0],
             "endpoints": [[-0.3, -0.3], [-0.3, 0.3]]},
            {"id": 2, "kind": "surface", "prehensile": False, "normal": [0.0, 1.0],
             "endpoints": [[-0.3, -0.3], [0.3, -0.3]]},
            {"id": 3, "kind": "point", "prehensile": True, "normal": [-1.0, 0.0],
             "position": [-0.35, 0.0]},
        ],
        "collision_segments": [
            {"p1": [-0.3, -0.3], "p2": [-0.3, 0.3]},
            {"p1": [-0.3, 0.3], "p2": [0.3, 0.3]},
            {"p1": [0.3, 0.3], "p2": [0.3, -0.3]},
            {"p1": [0.3, -0.3], "p2": [-0.3, -0.3]},
        ],
    },
    "obstacles": [
        {"kind": "segment", "p1": [-1.0, 0.9], "p2": [4.0, 0.9], "radius": 0.05},
        {"kind": "segment", "p1": [-1.0, -0.9], "p2": [4.0, -0.9], "radius": 0.05},
    ],
    "start": {
        "base": [0.0, 0.0, 0.0],
        "ee": [[0.35, 0.0]],
        "contact_state": [0],
        "q_o": [1.5, 0.0, 0.0],
        "v_o": [0.0, 0.0, 0.0],
    },
    "goal": {"mu": [3.0, 0.0, 0.0, 1.5, 0.0, 0.0], "sigma": [0.04, 0.04, 0.09, 1.0, 1.0, 1.0],
             "select": [0, 1], "delta": 0.15},
}


def fd_check(comp, U, name, h=1e-6):
    _, _, _, m0, grad = comp.evaluate(U, want_grad=True)
    g = grad.ravel()
    rng = np.random.default_rng(0)
    idxs = rng.choice(U.size, size=min(25, U.size), replace=False)
    worst = 0.0
    for i in idxs:
        Up = U.copy().ravel()
        Um = U.copy().ravel()
        Up[i] += h
        Um[i] -= h
        _, _, _, mp, _ = comp.evaluate(Up.reshape(U.shape))
        _, _, _, mm, _ = comp.evaluate(Um.reshape(U.shape))
        fd = (mp - mm) / (2 * h)
        denom = max(1.0, abs(fd), abs(g[i]))
        rel = abs(fd - g[i]) / denom
        worst = max(worst, rel)
    print(f"{name:24s} merit={m0:10.4f} worst rel grad err={worst:.2e}")
    return worst


def main():
    scenario = load_scenario(BOX)
    weights = OcpWeights.for_scenario(scenario)
    rng = np.random.default_rng(42)

    cases = [
        ("maintain_free", (0,), SwitchAction(0, 0)),
        ("establish_surface", (0,), SwitchAction(1, 1)),
        ("establish_point", (0,), SwitchAction(1, 3)),
        ("closed_push", (1,), SwitchAction(0, 0)),
        ("closed_grasp", (3,), SwitchAction(0, 0)),
        ("break_contact", (1,), SwitchAction(1, 0)),
    ]
    for name, s, a in cases:
        x0 = scenario.start.copy()
        if s[0] == 1:
            x0.ee[0] = np.array([1.2, 0.05])
            x0.base[:] = [0.8, 0.0, 0.0]
        if s[0] == 3:
            x0.ee[0] = np.array([1.15, 0.0])
            x0.base[:] = [0.75, 0.0, 0.0]
            x0.ee_heading[0] = np.pi
        x0.v_o[:] = [0.05, -0.02, 0.01]
        schedule = build_mode_schedule(s, a, 1.2)
        refs = np.array([1.0, 0.2, 0.1, 1.8, 0.1, 0.05])
        comp = CompiledProblem(scenario, x0, [SegmentDef(s, a, schedule, refs)], weights, 0.1)
        U = 0.3 * rng.standard_normal((comp.K, comp.layout.nu))
        U[:, -2:] *= 20
        fd_check(comp, U, name)


if __name__ == "__main__":
    main()
