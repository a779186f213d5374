"""Scratch: trace GN iterations on the problem cases (not shipped)."""
import numpy as np

from modeplan.contacts import SwitchAction, build_mode_schedule
from modeplan.ocp import CompiledProblem, OcpWeights, SegmentDef, solve_compiled
from modeplan import kernels as kr
from modeplan.scene import load_scenario
from scratch_check import BOX


def trace_solve(comp, U0=None, iters=30):
    K, nu = comp.K, comp.layout.nu
    U = np.zeros((K, nu)) if U0 is None else U0.copy()
    X = comp.rollout(U)
    nr = comp._residuals(X, U, True)
    cost, viol, merit = comp._sums(nr)
    print(f"  it  0: merit={merit:12.4f} viol={viol:.3e}")
    for it in range(1, iters + 1):
        A, B = comp._linearize(X, U)
        S = kr.sensitivity_kernel(A, B, K)
        J = kr.assemble_jacobian(comp._gx, comp._gu, comp._rstep, nr, S, K, nu)
        res = comp._res[:nr]
        g = J.T @ res
        G = J.T @ J
        lm = 1e-8 * (1.0 + float(np.max(np.diag(G))))
        step = np.linalg.solve(G + lm * np.eye(G.shape[0]), -g)
        slope = float(g @ step)
        alpha, accepted = 1.0, False
        while alpha > 1e-6:
            U_try = U + alpha * step.reshape(K, nu)
            X_try = comp.rollout(U_try)
            nr_try = comp._residuals(X_try, U_try, False)
            c_t, v_t, m_t = comp._sums(nr_try)
            if m_t <= merit + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        print(
            f"  it {it:2d}: merit={merit:12.4f} -> {m_t:12.4f} viol={v_t:.3e} "
            f"|step|={np.linalg.norm(step):9.3f} alpha={alpha:.2e} slope={slope:.3e} acc={accepted}"
        )
        if not accepted:
            print("  LINE SEARCH FAILED")
            break
        U, X = U_try, X_try
        merit, viol = m_t, v_t
        nr = comp._residuals(X, U, True)
    return U


def main():
    scenario = load_scenario(BOX)
    weights = OcpWeights.for_scenario(scenario)

    print("=== push_box+x ===")
    x2 = scenario.start.copy()
    x2.base[:] = [0.7, 0.0, 0.0]
    x2.ee[0] = [1.2, 0.0]
    sched_p = build_mode_schedule((1,), SwitchAction(0, 0), 1.2)
    refs4 = x2.ref_projection()
    refs4[3] += 0.6
    refs4[0] += 0.6
    comp = CompiledProblem(
        scenario, x2, [SegmentDef((1,), SwitchAction(0, 0), sched_p, refs4)], weights, 0.1
    )
    U = trace_solve(comp)
    X = comp.rollout(U)
    print("  final v_o path:", np.round(X[:, -3], 3))
    print("  final forces fx:", np.round(U[:, -2], 2))
    sol = solve_compiled(comp)
    print("  family:", {k: f"{v:.2e}" for k, v in sol.family_violation.items()})

    print("=== establish_surface ===")
    x1 = scenario.start.copy()
    x1.base[:] = [0.7, 0.0, 0.0]
    x1.ee[0] = [1.05, 0.0]
    sched_e = build_mode_schedule((0,), SwitchAction(1, 1), 1.2)
    refs3 = x1.ref_projection()
    comp = CompiledProblem(
        scenario, x1, [SegmentDef((0,), SwitchAction(1, 1), sched_e, refs3)], weights, 0.1
    )
    sol = solve_compiled(comp)
    print("  family:", {k: f"{v:.2e}" for k, v in sol.family_violation.items()})
    print("  ee path x:", np.round(sol.states[:, 3], 4))
    print("  ee vel x:", np.round(sol.inputs[:, 3], 4))


if __name__ == "__main__":
    main()
