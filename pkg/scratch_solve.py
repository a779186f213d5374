"""Scratch: solver behavior on representative modes (not shipped)."""
import time

import numpy as np

from modeplan.contacts import SwitchAction, build_mode_schedule
from modeplan.ocp import CompiledProblem, OcpWeights, SegmentDef, solve_compiled
from modeplan.scene import load_scenario
from scratch_check import BOX


def run(name, comp, guess=None):
    t0 = time.perf_counter()
    sol = solve_compiled(comp, guess)
    dt = time.perf_counter() - t0
    xT = sol.x_T
    print(
        f"{name:22s} conv={sol.converged!s:5s} iters={sol.iterations:2d} "
        f"merit={sol.merit:9.3f} cost={sol.cost:9.3f} viol={sol.violation:.2e} "
        f"t={dt * 1e3:6.1f}ms  base={np.round(xT.base, 3)} q_o={np.round(xT.q_o, 3)}"
    )
    return sol


def main():
    scenario = load_scenario(BOX)
    weights = OcpWeights.for_scenario(scenario)

    # 1. Stationary: refs = start projection, no contacts.
    x0 = scenario.start.copy()
    s, a = (0,), SwitchAction(0, 0)
    sched = build_mode_schedule(s, a, 1.2)
    refs = x0.ref_projection()
    comp = CompiledProblem(scenario, x0, [SegmentDef(s, a, sched, refs)], weights, 0.1)
    sol = run("stationary", comp)
    print("   input norm:", np.linalg.norm(sol.inputs))

    # 2. Locomotion toward +x.
    refs2 = refs.copy()
    refs2[0] += 1.2
    comp = CompiledProblem(scenario, x0, [SegmentDef(s, a, sched, refs2)], weights, 0.1)
    sol = run("locomote+x", comp)

    # 3. Establish surface contact on the box's left face (x=1.2 at q_o).
    x1 = scenario.start.copy()
    x1.base[:] = [0.7, 0.0, 0.0]
    x1.ee[0] = [1.05, 0.0]
    sched_e = build_mode_schedule((0,), SwitchAction(1, 1), 1.2)
    refs3 = x1.ref_projection()
    comp = CompiledProblem(
        scenario, x1, [SegmentDef((0,), SwitchAction(1, 1), sched_e, refs3)], weights, 0.1
    )
    sol_e = run("establish_surface", comp)
    print("   terminal ee:", np.round(sol_e.x_T.ee[0], 4), " (box left face at x=1.2)")

    # 4. Push the box +x from closed surface contact.
    x2 = sol_e.x_T
    sched_p = build_mode_schedule((1,), SwitchAction(0, 0), 1.2)
    refs4 = x2.ref_projection()
    refs4[3] += 0.6  # ask the box to move 0.6 m in x
    refs4[0] += 0.6
    comp = CompiledProblem(
        scenario, x2, [SegmentDef((1,), SwitchAction(0, 0), sched_p, refs4)], weights, 0.1
    )
    sol_p = run("push_box+x", comp, guess=None)
    print("   forces at k=5:", np.round(sol_p.inputs[5, -2:], 2))
    print("   family viol:", {k: f"{v:.1e}" for k, v in sol_p.family_violation.items()})

    # 5. Timing loop on the push problem.
    t0 = time.perf_counter()
    n = 20
    for _ in range(n):
        solve_compiled(comp)
    print(f"avg push solve: {(time.perf_counter() - t0) / n * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
