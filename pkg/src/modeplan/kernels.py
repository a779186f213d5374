"""Hot numeric kernels for the mode-conditioned trajectory optimizer.

Everything here is written as flat-array loops so the same source runs either
compiled with numba ``@njit`` (default) or as plain Python/numpy when the
``MODEPLAN_NO_NUMBA`` environment variable is set. Both paths execute the
identical statements, so results agree bit for bit; the benchmark in
``benchmarks/bench_kernels.py`` compares their speed.

State vector layout (length ``nx = 3 + 3*n_e + 2*n_o``):
    [base x, base y, base yaw,
     ee_0 x, ee_0 y, ..., ee_{n_e-1} y,
     heading_0, ..., heading_{n_e-1},
     q_o (n_o), v_o (n_o)]

Input vector layout (length ``nu = 3 + 5*n_e``):
    [base vx, vy, wyaw,
     ee_0 vx, vy, ..., heading rates (n_e), forces fx, fy per limb]
"""

from __future__ import annotations

import math
import os

import numpy as np

NUMBA_ENABLED = False
if not os.environ.get("MODEPLAN_NO_NUMBA"):
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:
        pass
if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


# Limb phase status codes (mirrors contacts.py; kept as plain ints for numba).
OPEN, CLOSED, APPROACHING, RETRACTING = 0, 1, 2, 3

# Residual family ids. Cost families come first, penalty families after.
FAM_TRACK = 0
FAM_REG_STATE = 1
FAM_REG_INPUT = 2
FAM_RELVEL = 3
FAM_ZERO_FORCE = 4
FAM_UNILATERAL = 5
FAM_CONE = 6
FAM_TANGENT_FORCE = 7
FAM_MATCH_POINT = 8
FAM_SURF_TAN = 9
FAM_SURF_NORM = 10
FAM_HEAD_ALIGN = 11
FAM_HEAD_RATE = 12
FAM_APPROACH = 13
FAM_RETRACT = 14
FAM_BASE_BOX = 15
FAM_QO_BOX = 16
FAM_VO_BOX = 17
FAM_VEL_LIM = 18
FAM_REACH = 19
FAM_COLLISION = 20
FAM_BASE_FROZEN = 21
N_FAMILIES = 22
COST_FAMILIES = (FAM_TRACK, FAM_REG_STATE, FAM_REG_INPUT)

# Characteristic magnitudes used to scale penalty residuals.
SCALE_POS = 1.0
SCALE_VEL = 1.0
SCALE_FORCE = 10.0
# Squared-unit residuals (velocity-norm and reach-disk limits) get a tighter
# characteristic magnitude so their soft equilibria stay inside tolerance.
SCALE_SQ = 0.1

# Implicit velocity-update solve: the bias term is evaluated at the new
# velocity, which keeps stiff tanh friction/stiction stable at coarse steps.
NEWTON_ITERS = 30
NEWTON_TOL = 1e-12

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def _wrap(a):
    return a - TWO_PI * math.floor((a + math.pi) / TWO_PI)


@njit(cache=True)
def _bias_eval(q, v, obj_kind, bpg, bps, bpl, bvg, bvs, bvl, vxy, vgain, vscale,
               b, dbdq, dbdv, want_partials):
    """Generalized bias b(q, v) and its partials; returns nothing, fills outputs."""
    n_o = q.shape[0]
    for i in range(n_o):
        tq = math.tanh(bps[i] * q[i])
        tv = math.tanh(bvs[i] * v[i])
        b[i] = bpg[i] * tq + bpl[i] * q[i] + bvg[i] * tv + bvl[i] * v[i]
        if want_partials:
            for j in range(n_o):
                dbdq[i, j] = 0.0
                dbdv[i, j] = 0.0
            dbdq[i, i] = bpg[i] * bps[i] * (1.0 - tq * tq) + bpl[i]
            dbdv[i, i] = bvg[i] * bvs[i] * (1.0 - tv * tv) + bvl[i]
    if obj_kind == 1 and vgain > 0.0:
        # Four-vertex tanh ground-friction patch of a free planar body.
        ct = math.cos(q[2])
        st = math.sin(q[2])
        om = v[2]
        for m in range(vxy.shape[0]):
            rx = ct * vxy[m, 0] - st * vxy[m, 1]
            ry = st * vxy[m, 0] + ct * vxy[m, 1]
            vpx = v[0] - om * ry
            vpy = v[1] + om * rx
            tx = math.tanh(vscale * vpx)
            ty = math.tanh(vscale * vpy)
            fx = vgain * tx
            fy = vgain * ty
            b[0] += fx
            b[1] += fy
            b[2] += rx * fy - ry * fx
            if want_partials:
                dx = vgain * vscale * (1.0 - tx * tx)
                dy = vgain * vscale * (1.0 - ty * ty)
                # d v_pt / d v_o = [[1, 0, -ry], [0, 1, rx]]
                dbdv[0, 0] += dx
                dbdv[0, 2] += dx * (-ry)
                dbdv[1, 1] += dy
                dbdv[1, 2] += dy * rx
                dbdv[2, 0] += rx * 0.0 - ry * dx
                dbdv[2, 1] += rx * dy
                dbdv[2, 2] += rx * dy * rx - ry * dx * (-ry)
                # dr/dtheta = perp(r); dv_pt/dtheta = -om * r
                drx = -ry
                dry = rx
                dfx = dx * (-om * rx)
                dfy = dy * (-om * ry)
                dbdq[0, 2] += dfx
                dbdq[1, 2] += dfy
                dbdq[2, 2] += drx * fy + rx * dfy - dry * fx - ry * dfx


@njit(cache=True)
def _dyn_step(x, u, k, dt, n_e, n_o,
              obj_kind, minv, axis,
              bpg, bps, bpl, bvg, bvs, bvl, vxy, vgain, vscale,
              c_geom, c_point, lcontact, force_on,
              xn, A, B, want_jac):
    """One semi-implicit Euler step; optionally fills A = dxn/dx, B = dxn/du."""
    nx = x.shape[0]
    nu = u.shape[0]
    iq = 3 + 3 * n_e
    iv = iq + n_o
    if want_jac:
        for i in range(nx):
            for j in range(nx):
                A[i, j] = 1.0 if i == j else 0.0
            for j in range(nu):
                B[i, j] = 0.0
    # Kinematic integrators: base, end-effectors, headings.
    for i in range(3):
        xn[i] = x[i] + dt * u[i]
        if want_jac:
            B[i, i] = dt
    for e in range(n_e):
        for d in range(2):
            xn[3 + 2 * e + d] = x[3 + 2 * e + d] + dt * u[3 + 2 * e + d]
            if want_jac:
                B[3 + 2 * e + d, 3 + 2 * e + d] = dt
        xn[3 + 2 * n_e + e] = x[3 + 2 * n_e + e] + dt * u[3 + 2 * n_e + e]
        if want_jac:
            B[3 + 2 * n_e + e, 3 + 2 * n_e + e] = dt

    q = x[iq:iq + n_o]
    v = x[iv:iv + n_o]
    b = np.zeros(n_o)
    dbdq = np.zeros((n_o, n_o))
    dbdv = np.zeros((n_o, n_o))
    _bias_eval(q, v, obj_kind, bpg, bps, bpl, bvg, bvs, bvl, vxy, vgain, vscale,
               b, dbdq, dbdv, want_jac)

    tau = np.zeros(n_o)
    for i in range(n_o):
        tau[i] = -b[i]
    dtau_dq = np.zeros((n_o, n_o))
    dtau_dee = np.zeros((n_o, 2 * n_e))
    dtau_df = np.zeros((n_o, 2 * n_e))

    for e in range(n_e):
        cid = lcontact[k, e]
        if cid <= 0 or force_on[k, e] == 0:
            continue
        ci = cid - 1
        fx = u[3 + 3 * n_e + 2 * e]
        fy = u[3 + 3 * n_e + 2 * e + 1]
        if obj_kind == 0:
            th = q[0]
            ct = math.cos(th)
            st = math.sin(th)
            if c_geom[ci] == 0:
                px = axis[0] + ct * c_point[ci, 0] - st * c_point[ci, 1]
                py = axis[1] + st * c_point[ci, 0] + ct * c_point[ci, 1]
            else:
                px = x[3 + 2 * e]
                py = x[3 + 2 * e + 1]
            rx = px - axis[0]
            ry = py - axis[1]
            # Column jacobian perp(r); torque = -ry*fx + rx*fy
            tau[0] += -ry * fx + rx * fy
            if want_jac:
                dtau_df[0, 2 * e] = -ry
                dtau_df[0, 2 * e + 1] = rx
                if c_geom[ci] == 0:
                    # dr/dq = perp(r): torque' = -(rx)*fx - ry*fy
                    dtau_dq[0, 0] += -rx * fx - ry * fy
                else:
                    dtau_dee[0, 2 * e] += fy
                    dtau_dee[0, 2 * e + 1] += -fx
        else:
            th = q[2]
            ct = math.cos(th)
            st = math.sin(th)
            if c_geom[ci] == 0:
                px = q[0] + ct * c_point[ci, 0] - st * c_point[ci, 1]
                py = q[1] + st * c_point[ci, 0] + ct * c_point[ci, 1]
            else:
                px = x[3 + 2 * e]
                py = x[3 + 2 * e + 1]
            rx = px - q[0]
            ry = py - q[1]
            tau[0] += fx
            tau[1] += fy
            tau[2] += rx * fy - ry * fx
            if want_jac:
                dtau_df[0, 2 * e] = 1.0
                dtau_df[1, 2 * e + 1] = 1.0
                dtau_df[2, 2 * e] = -ry
                dtau_df[2, 2 * e + 1] = rx
                if c_geom[ci] == 0:
                    # r = R(th) p_local: dr/dth = perp(r); d(r x f)/dth = -(r . f)
                    dtau_dq[2, 2] += -(rx * fx + ry * fy)
                else:
                    # r = ee - center: d(r x f)/dcenter = (-fy, fx)
                    dtau_dq[2, 0] += -fy
                    dtau_dq[2, 1] += fx
                    dtau_dee[2, 2 * e] += fy
                    dtau_dee[2, 2 * e + 1] += -fx

    # v' = v + dt * minv * (tau - 0)   (bias already folded into tau)
    for i in range(n_o):
        acc = minv[i] * tau[i]
        xn[iv + i] = v[i] + dt * acc
    for i in range(n_o):
        xn[iq + i] = q[i] + dt * xn[iv + i]

    if want_jac:
        for i in range(n_o):
            for j in range(n_o):
                davq = minv[i] * (dtau_dq[i, j] - dbdq[i, j])
                davv = minv[i] * (-dbdv[i, j])
                A[iv + i, iq + j] += dt * davq
                A[iv + i, iv + j] += dt * davv
                A[iq + i, iq + j] += dt * dt * davq
                A[iq + i, iv + j] += dt * davv * dt
            A[iq + i, iv + i] += dt
            for e in range(n_e):
                for d in range(2):
                    dee = minv[i] * dtau_dee[i, 2 * e + d]
                    if dee != 0.0:
                        A[iv + i, 3 + 2 * e + d] += dt * dee
                        A[iq + i, 3 + 2 * e + d] += dt * dt * dee
                    dff = minv[i] * dtau_df[i, 2 * e + d]
                    if dff != 0.0:
                        B[iv + i, 3 + 3 * n_e + 2 * e + d] += dt * dff
                        B[iq + i, 3 + 3 * n_e + 2 * e + d] += dt * dt * dff


@njit(cache=True)
def rollout_kernel(x0, U, K, dt, n_e, n_o,
                   obj_kind, minv, axis,
                   bpg, bps, bpl, bvg, bvs, bvl, vxy, vgain, vscale,
                   c_geom, c_point, lcontact, force_on):
    """Roll the dynamics forward; returns the (K+1, nx) state path."""
    nx = x0.shape[0]
    X = np.empty((K + 1, nx))
    for i in range(nx):
        X[0, i] = x0[i]
    dummyA = np.empty((0, 0))
    dummyB = np.empty((0, 0))
    for k in range(K):
        _dyn_step(X[k], U[k], k, dt, n_e, n_o,
                  obj_kind, minv, axis,
                  bpg, bps, bpl, bvg, bvs, bvl, vxy, vgain, vscale,
                  c_geom, c_point, lcontact, force_on,
                  X[k + 1], dummyA, dummyB, False)
    return X


@njit(cache=True)
def linearize_kernel(X, U, K, dt, n_e, n_o,
                     obj_kind, minv, axis,
                     bpg, bps, bpl, bvg, bvs, bvl, vxy, vgain, vscale,
                     c_geom, c_point, lcontact, force_on):
    """Per-step dynamics jacobians A_k, B_k along a rolled-out path."""
    nx = X.shape[1]
    nu = U.shape[1]
    A = np.empty((K, nx, nx))
    B = np.empty((K, nx, nu))
    xn = np.empty(nx)
    for k in range(K):
        _dyn_step(X[k], U[k], k, dt, n_e, n_o,
                  obj_kind, minv, axis,
                  bpg, bps, bpl, bvg, bvs, bvl, vxy, vgain, vscale,
                  c_geom, c_point, lcontact, force_on,
                  xn, A[k], B[k], True)
    return A, B


@njit(cache=True)
def sensitivity_kernel(A, B, K):
    """Forward sensitivities S_k = dx_k / dU for single-shooting rollouts."""
    nx = A.shape[1]
    nu = B.shape[2]
    nU = K * nu
    S = np.zeros((K + 1, nx, nU))
    for k in range(K):
        # S_{k+1} = A_k @ S_k  (only first k*nu columns can be nonzero)
        ncols = k * nu
        for i in range(nx):
            for j in range(ncols):
                acc = 0.0
                for m in range(nx):
                    aim = A[k, i, m]
                    if aim != 0.0:
                        acc += aim * S[k, m, j]
                S[k + 1, i, j] = acc
        for i in range(nx):
            for j in range(nu):
                S[k + 1, i, ncols + j] += B[k, i, j]
    return S


@njit(cache=True)
def _contact_world(obj_kind, axis, q, c_point, ci):
    """World position of a point contact and the object frame rotation."""
    if obj_kind == 0:
        th = q[0]
        ox = axis[0]
        oy = axis[1]
    else:
        th = q[2]
        ox = q[0]
        oy = q[1]
    ct = math.cos(th)
    st = math.sin(th)
    px = ox + ct * c_point[ci, 0] - st * c_point[ci, 1]
    py = oy + st * c_point[ci, 0] + ct * c_point[ci, 1]
    return px, py, ct, st, ox, oy


@njit(cache=True)
def residual_kernel(X, U, K, dt, n_e, n_o, rho, fammask,
                    obj_kind, axis,
                    c_geom, c_point, c_seg, c_normal, c_preh,
                    mount, reach, limb_preh,
                    status, lcontact, est_mask, switch_mask, base_frozen,
                    swvel_kind, swvel_ref,
                    refs, q_track, ee_nom, w_reg_ee, w_reg_vo, r_diag, u_nom,
                    bxy_lo, bxy_hi, yaw_lo, yaw_hi,
                    qo_lo, qo_hi, vo_lo, vo_hi,
                    vmax_lin, vmax_ang, ee_vmax, mu_s, tangent_zero_on,
                    stat_seg, stat_circ, obj_seg,
                    pq_kind, pq_idx, pq_par, pt_kind, pt_idx, p_margin, p_limb,
                    res, raw, gx, gu, rstep, rfam, want_grad):
    """Stacked weighted residual rows with per-step partials.

    Cost rows carry sqrt(weight) factors so that merit == sum(res^2) up to
    rounding; penalty rows are sqrt(rho) * (residual / scale) with squared
    hinges for inequalities. ``raw`` holds the scaled unweighted residual for
    penalty rows (zero for cost rows) so violation = sum(raw^2).
    Returns the number of rows written.
    """
    nx = X.shape[1]
    nu = U.shape[1]
    iq = 3 + 3 * n_e
    iv = iq + n_o
    sqrho = math.sqrt(rho)
    nr = 0

    for k in range(K + 1):
        x = X[k]
        terminal = k == K
        fac = 1.0 if terminal else dt
        q = x[iq:iq + n_o]
        v = x[iv:iv + n_o]
        if obj_kind == 0:
            oth = q[0]
            ox = axis[0]
            oy = axis[1]
        else:
            oth = q[2]
            ox = q[0]
            oy = q[1]
        cto = math.cos(oth)
        sto = math.sin(oth)

        # ------------------------------------------------ cost: tracking
        if fammask[FAM_TRACK]:
            for j in range(3 + n_o):
                w = math.sqrt(fac * q_track[j])
                if w == 0.0:
                    continue
                if j < 3:
                    d = x[j] - refs[k, j]
                    if j == 2:
                        d = _wrap(d)
                    res[nr] = w * d
                    if want_grad:
                        gx[nr, j] = w
                else:
                    res[nr] = w * (q[j - 3] - refs[k, j])
                    if want_grad:
                        gx[nr, iq + j - 3] = w
                raw[nr] = 0.0
                rstep[nr] = k
                rfam[nr] = FAM_TRACK
                nr += 1

        # ------------------------------------------- cost: state regularization
        if fammask[FAM_REG_STATE]:
            cy = math.cos(x[2])
            sy = math.sin(x[2])
            if w_reg_ee > 0.0:
                w = math.sqrt(fac * w_reg_ee)
                for e in range(n_e):
                    dx_ = x[3 + 2 * e] - x[0]
                    dy_ = x[3 + 2 * e + 1] - x[1]
                    # base-frame offset R(-yaw) @ d
                    rel0 = cy * dx_ + sy * dy_
                    rel1 = -sy * dx_ + cy * dy_
                    for d in range(2):
                        relv = rel0 if d == 0 else rel1
                        res[nr] = w * (relv - ee_nom[e, d])
                        if want_grad:
                            if d == 0:
                                gx[nr, 3 + 2 * e] = w * cy
                                gx[nr, 3 + 2 * e + 1] = w * sy
                                gx[nr, 0] = -w * cy
                                gx[nr, 1] = -w * sy
                                gx[nr, 2] = w * (-sy * dx_ + cy * dy_)
                            else:
                                gx[nr, 3 + 2 * e] = -w * sy
                                gx[nr, 3 + 2 * e + 1] = w * cy
                                gx[nr, 0] = w * sy
                                gx[nr, 1] = -w * cy
                                gx[nr, 2] = w * (-cy * dx_ - sy * dy_)
                        raw[nr] = 0.0
                        rstep[nr] = k
                        rfam[nr] = FAM_REG_STATE
                        nr += 1
            for i in range(n_o):
                if w_reg_vo[i] > 0.0:
                    w = math.sqrt(fac * w_reg_vo[i])
                    res[nr] = w * v[i]
                    if want_grad:
                        gx[nr, iv + i] = w
                    raw[nr] = 0.0
                    rstep[nr] = k
                    rfam[nr] = FAM_REG_STATE
                    nr += 1

        # ------------------------------------------------ state penalties (k >= 1)
        if k > 0:
            if fammask[FAM_BASE_BOX]:
                for d in range(2):
                    lo = bxy_lo[d]
                    hi = bxy_hi[d]
                    g = x[d] - lo
                    if g < 0.0:
                        res[nr] = sqrho * (-g) / SCALE_POS
                        raw[nr] = -g / SCALE_POS
                        if want_grad:
                            gx[nr, d] = -sqrho / SCALE_POS
                        rstep[nr] = k
                        rfam[nr] = FAM_BASE_BOX
                        nr += 1
                    g = hi - x[d]
                    if g < 0.0:
                        res[nr] = sqrho * (-g) / SCALE_POS
                        raw[nr] = -g / SCALE_POS
                        if want_grad:
                            gx[nr, d] = sqrho / SCALE_POS
                        rstep[nr] = k
                        rfam[nr] = FAM_BASE_BOX
                        nr += 1
                g = x[2] - yaw_lo
                if g < 0.0:
                    res[nr] = sqrho * (-g)
                    raw[nr] = -g
                    if want_grad:
                        gx[nr, 2] = -sqrho
                    rstep[nr] = k
                    rfam[nr] = FAM_BASE_BOX
                    nr += 1
                g = yaw_hi - x[2]
                if g < 0.0:
                    res[nr] = sqrho * (-g)
                    raw[nr] = -g
                    if want_grad:
                        gx[nr, 2] = sqrho
                    rstep[nr] = k
                    rfam[nr] = FAM_BASE_BOX
                    nr += 1
            if fammask[FAM_QO_BOX]:
                for i in range(n_o):
                    g = q[i] - qo_lo[i]
                    if g < 0.0:
                        res[nr] = sqrho * (-g)
                        raw[nr] = -g
                        if want_grad:
                            gx[nr, iq + i] = -sqrho
                        rstep[nr] = k
                        rfam[nr] = FAM_QO_BOX
                        nr += 1
                    g = qo_hi[i] - q[i]
                    if g < 0.0:
                        res[nr] = sqrho * (-g)
                        raw[nr] = -g
                        if want_grad:
                            gx[nr, iq + i] = sqrho
                        rstep[nr] = k
                        rfam[nr] = FAM_QO_BOX
                        nr += 1
            if fammask[FAM_VO_BOX]:
                for i in range(n_o):
                    g = v[i] - vo_lo[i]
                    if g < 0.0:
                        res[nr] = sqrho * (-g) / SCALE_VEL
                        raw[nr] = -g / SCALE_VEL
                        if want_grad:
                            gx[nr, iv + i] = -sqrho / SCALE_VEL
                        rstep[nr] = k
                        rfam[nr] = FAM_VO_BOX
                        nr += 1
                    g = vo_hi[i] - v[i]
                    if g < 0.0:
                        res[nr] = sqrho * (-g) / SCALE_VEL
                        raw[nr] = -g / SCALE_VEL
                        if want_grad:
                            gx[nr, iv + i] = sqrho / SCALE_VEL
                        rstep[nr] = k
                        rfam[nr] = FAM_VO_BOX
                        nr += 1
            if fammask[FAM_REACH]:
                cy = math.cos(x[2])
                sy = math.sin(x[2])
                for e in range(n_e):
                    mx = x[0] + cy * mount[e, 0] - sy * mount[e, 1]
                    my = x[1] + sy * mount[e, 0] + cy * mount[e, 1]
                    dx_ = x[3 + 2 * e] - mx
                    dy_ = x[3 + 2 * e + 1] - my
                    g = reach[e] * reach[e] - (dx_ * dx_ + dy_ * dy_)
                    if g < 0.0:
                        res[nr] = sqrho * (-g) / SCALE_POS
                        raw[nr] = -g / SCALE_POS
                        if want_grad:
                            f = sqrho / SCALE_POS  # d(-g)/dz = 2 d . dz/d*
                            gx[nr, 3 + 2 * e] = f * 2.0 * dx_
                            gx[nr, 3 + 2 * e + 1] = f * 2.0 * dy_
                            gx[nr, 0] = -f * 2.0 * dx_
                            gx[nr, 1] = -f * 2.0 * dy_
                            dmx = -sy * mount[e, 0] - cy * mount[e, 1]
                            dmy = cy * mount[e, 0] - sy * mount[e, 1]
                            gx[nr, 2] = -f * 2.0 * (dx_ * dmx + dy_ * dmy)
                        rstep[nr] = k
                        rfam[nr] = FAM_REACH
                        nr += 1
            if fammask[FAM_COLLISION]:
                for p in range(pq_kind.shape[0]):
                    limb = p_limb[p]
                    if limb >= 0:
                        if switch_mask[k, limb] == 0 or status[k, limb] == CLOSED:
                            continue
                    # Query point and its velocity jacobian kind.
                    qk = pq_kind[p]
                    if qk == 0:
                        px = x[0]
                        py = x[1]
                    elif qk == 1:
                        px = x[3 + 2 * pq_idx[p]]
                        py = x[3 + 2 * pq_idx[p] + 1]
                    else:
                        j = pq_idx[p]
                        t = pq_par[p]
                        lx = (1.0 - t) * obj_seg[j, 0] + t * obj_seg[j, 2]
                        ly = (1.0 - t) * obj_seg[j, 1] + t * obj_seg[j, 3]
                        px = ox + cto * lx - sto * ly
                        py = oy + sto * lx + cto * ly
                    # Target closest point.
                    tk = pt_kind[p]
                    if tk == 0:
                        j = pt_idx[p]
                        ax_ = stat_seg[j, 0]
                        ay_ = stat_seg[j, 1]
                        bx_ = stat_seg[j, 2]
                        by_ = stat_seg[j, 3]
                    elif tk == 1:
                        j = pt_idx[p]
                        ax_ = stat_circ[j, 0]
                        ay_ = stat_circ[j, 1]
                        bx_ = ax_
                        by_ = ay_
                    else:
                        j = pt_idx[p]
                        ax_ = ox + cto * obj_seg[j, 0] - sto * obj_seg[j, 1]
                        ay_ = oy + sto * obj_seg[j, 0] + cto * obj_seg[j, 1]
                        bx_ = ox + cto * obj_seg[j, 2] - sto * obj_seg[j, 3]
                        by_ = oy + sto * obj_seg[j, 2] + cto * obj_seg[j, 3]
                    ex_ = bx_ - ax_
                    ey_ = by_ - ay_
                    denom = ex_ * ex_ + ey_ * ey_
                    if denom < 1e-16:
                        t_cl = 0.0
                    else:
                        t_cl = ((px - ax_) * ex_ + (py - ay_) * ey_) / denom
                        if t_cl < 0.0:
                            t_cl = 0.0
                        elif t_cl > 1.0:
                            t_cl = 1.0
                    cxp = ax_ + t_cl * ex_
                    cyp = ay_ + t_cl * ey_
                    ddx = px - cxp
                    ddy = py - cyp
                    dist = math.sqrt(ddx * ddx + ddy * ddy)
                    g = dist - p_margin[p]
                    if g >= 0.0:
                        continue
                    res[nr] = sqrho * (-g) / SCALE_POS
                    raw[nr] = -g / SCALE_POS
                    if want_grad and dist > 1e-9:
                        ux = ddx / dist
                        uy = ddy / dist
                        f = -sqrho / SCALE_POS  # d res / d dist
                        # query-point motion
                        if qk == 0:
                            gx[nr, 0] += f * ux
                            gx[nr, 1] += f * uy
                        elif qk == 1:
                            gx[nr, 3 + 2 * pq_idx[p]] += f * ux
                            gx[nr, 3 + 2 * pq_idx[p] + 1] += f * uy
                        else:
                            # material point of the object
                            if obj_kind == 0:
                                gx[nr, iq] += f * (ux * (-(py - oy)) + uy * (px - ox))
                            else:
                                gx[nr, iq] += f * ux
                                gx[nr, iq + 1] += f * uy
                                gx[nr, iq + 2] += f * (ux * (-(py - oy)) + uy * (px - ox))
                        # target motion (object segments move with q)
                        if tk == 2:
                            if obj_kind == 0:
                                gx[nr, iq] -= f * (ux * (-(cyp - oy)) + uy * (cxp - ox))
                            else:
                                gx[nr, iq] -= f * ux
                                gx[nr, iq + 1] -= f * uy
                                gx[nr, iq + 2] -= f * (ux * (-(cyp - oy)) + uy * (cxp - ox))
                    rstep[nr] = k
                    rfam[nr] = FAM_COLLISION
                    nr += 1

        # ---------------------------------------- per-limb state penalties
        for e in range(n_e):
            cid = lcontact[k, e]
            if cid <= 0:
                continue
            ci = cid - 1
            st_e = status[k, e]
            if st_e != CLOSED:
                continue
            if c_geom[ci] == 0:
                px, py, _, _, _, _ = _contact_world(obj_kind, axis, q, c_point, ci)
                if fammask[FAM_MATCH_POINT] and est_mask[k, e] == 1 and k > 0:
                    for d in range(2):
                        rr = (x[3 + 2 * e + d] - (px if d == 0 else py)) / SCALE_POS
                        res[nr] = sqrho * rr
                        raw[nr] = rr
                        if want_grad:
                            f = sqrho / SCALE_POS
                            gx[nr, 3 + 2 * e + d] = f
                            if obj_kind == 0:
                                # dp/dq = perp(p - axis)
                                gx[nr, iq] = -f * (-(py - oy) if d == 0 else (px - ox))
                            else:
                                gx[nr, iq + d] = -f
                                gx[nr, iq + 2] = -f * (-(py - oy) if d == 0 else (px - ox))
                        rstep[nr] = k
                        rfam[nr] = FAM_MATCH_POINT
                        nr += 1
                if fammask[FAM_HEAD_ALIGN] and est_mask[k, e] == 1 and c_preh[ci] == 1 and k > 0:
                    na = math.atan2(sto * c_normal[ci, 0] + cto * c_normal[ci, 1],
                                    cto * c_normal[ci, 0] - sto * c_normal[ci, 1])
                    rr = _wrap(x[3 + 2 * n_e + e] - na)
                    res[nr] = sqrho * rr
                    raw[nr] = rr
                    if want_grad:
                        gx[nr, 3 + 2 * n_e + e] = sqrho
                        if obj_kind == 0:
                            gx[nr, iq] = -sqrho
                        else:
                            gx[nr, iq + 2] = -sqrho
                    rstep[nr] = k
                    rfam[nr] = FAM_HEAD_ALIGN
                    nr += 1
            elif k > 0:
                # Closed surface contact: stay inside the (tightened) segment.
                ax_ = ox + cto * c_seg[ci, 0] - sto * c_seg[ci, 1]
                ay_ = oy + sto * c_seg[ci, 0] + cto * c_seg[ci, 1]
                bx_ = ox + cto * c_seg[ci, 2] - sto * c_seg[ci, 3]
                by_ = oy + sto * c_seg[ci, 2] + cto * c_seg[ci, 3]
                ex_ = bx_ - ax_
                ey_ = by_ - ay_
                L = math.sqrt(ex_ * ex_ + ey_ * ey_)
                tx = ex_ / L
                ty = ey_ / L
                dxa = x[3 + 2 * e] - ax_
                dya = x[3 + 2 * e + 1] - ay_
                taup = tx * dxa + ty * dya
                margin = 0.05
                # d tau / d(theta): segment rotates rigidly about the origin.
                dtau_dth = ((-ty) * dxa + tx * dya) - (tx * (-(ay_ - oy)) + ty * (ax_ - ox))
                if fammask[FAM_SURF_TAN]:
                    g = taup - margin
                    if g < 0.0:
                        res[nr] = sqrho * (-g) / SCALE_POS
                        raw[nr] = -g / SCALE_POS
                        if want_grad:
                            f = -sqrho / SCALE_POS
                            gx[nr, 3 + 2 * e] = f * tx
                            gx[nr, 3 + 2 * e + 1] = f * ty
                            if obj_kind == 0:
                                gx[nr, iq] = f * dtau_dth
                            else:
                                gx[nr, iq] = f * (-tx)
                                gx[nr, iq + 1] = f * (-ty)
                                gx[nr, iq + 2] = f * dtau_dth
                        rstep[nr] = k
                        rfam[nr] = FAM_SURF_TAN
                        nr += 1
                    g = (L - margin) - taup
                    if g < 0.0:
                        res[nr] = sqrho * (-g) / SCALE_POS
                        raw[nr] = -g / SCALE_POS
                        if want_grad:
                            f = sqrho / SCALE_POS
                            gx[nr, 3 + 2 * e] = f * tx
                            gx[nr, 3 + 2 * e + 1] = f * ty
                            if obj_kind == 0:
                                gx[nr, iq] = f * dtau_dth
                            else:
                                gx[nr, iq] = f * (-tx)
                                gx[nr, iq + 1] = f * (-ty)
                                gx[nr, iq + 2] = f * dtau_dth
                        rstep[nr] = k
                        rfam[nr] = FAM_SURF_TAN
                        nr += 1
                if fammask[FAM_SURF_NORM]:
                    nu_ = -ty * dxa + tx * dya
                    res[nr] = sqrho * nu_ / SCALE_POS
                    raw[nr] = nu_ / SCALE_POS
                    if want_grad:
                        f = sqrho / SCALE_POS
                        gx[nr, 3 + 2 * e] = f * (-ty)
                        gx[nr, 3 + 2 * e + 1] = f * tx
                        dnu_dth = (-tx * dxa - ty * dya) - ((-ty) * (-(ay_ - oy)) + tx * (ax_ - ox))
                        if obj_kind == 0:
                            gx[nr, iq] = f * dnu_dth
                        else:
                            gx[nr, iq] = f * ty
                            gx[nr, iq + 1] = f * (-tx)
                            gx[nr, iq + 2] = f * dnu_dth
                    rstep[nr] = k
                    rfam[nr] = FAM_SURF_NORM
                    nr += 1

        if terminal:
            break

        # -------------------------------------------------- input rows
        u = U[k]
        if fammask[FAM_REG_INPUT]:
            for j in range(nu):
                if r_diag[j] > 0.0:
                    w = math.sqrt(dt * r_diag[j])
                    res[nr] = w * (u[j] - u_nom[j])
                    if want_grad:
                        gu[nr, j] = w
                    raw[nr] = 0.0
                    rstep[nr] = k
                    rfam[nr] = FAM_REG_INPUT
                    nr += 1
        if fammask[FAM_VEL_LIM]:
            g = vmax_lin * vmax_lin - (u[0] * u[0] + u[1] * u[1])
            if g < 0.0:
                res[nr] = sqrho * (-g)
                raw[nr] = -g
                if want_grad:
                    gu[nr, 0] = sqrho * 2.0 * u[0]
                    gu[nr, 1] = sqrho * 2.0 * u[1]
                rstep[nr] = k
                rfam[nr] = FAM_VEL_LIM
                nr += 1
            g = vmax_ang * vmax_ang - u[2] * u[2]
            if g < 0.0:
                res[nr] = sqrho * (-g)
                raw[nr] = -g
                if want_grad:
                    gu[nr, 2] = sqrho * 2.0 * u[2]
                rstep[nr] = k
                rfam[nr] = FAM_VEL_LIM
                nr += 1
            for e in range(n_e):
                ux_ = u[3 + 2 * e]
                uy_ = u[3 + 2 * e + 1]
                g = ee_vmax * ee_vmax - (ux_ * ux_ + uy_ * uy_)
                if g < 0.0:
                    res[nr] = sqrho * (-g)
                    raw[nr] = -g
                    if want_grad:
                        gu[nr, 3 + 2 * e] = sqrho * 2.0 * ux_
                        gu[nr, 3 + 2 * e + 1] = sqrho * 2.0 * uy_
                    rstep[nr] = k
                    rfam[nr] = FAM_VEL_LIM
                    nr += 1
        if fammask[FAM_BASE_FROZEN] and base_frozen[k] == 1:
            for d in range(3):
                res[nr] = sqrho * u[d] / SCALE_VEL
                raw[nr] = u[d] / SCALE_VEL
                if want_grad:
                    gu[nr, d] = sqrho / SCALE_VEL
                rstep[nr] = k
                rfam[nr] = FAM_BASE_FROZEN
                nr += 1

        for e in range(n_e):
            st_e = status[k, e]
            cid = lcontact[k, e]
            if fammask[FAM_ZERO_FORCE] and st_e != CLOSED:
                for d in range(2):
                    rr = u[3 + 3 * n_e + 2 * e + d] / SCALE_FORCE
                    res[nr] = sqrho * rr
                    raw[nr] = rr
                    if want_grad:
                        gu[nr, 3 + 3 * n_e + 2 * e + d] = sqrho / SCALE_FORCE
                    rstep[nr] = k
                    rfam[nr] = FAM_ZERO_FORCE
                    nr += 1
            if cid <= 0:
                continue
            ci = cid - 1
            # World contact frame (normal rotated by the object configuration).
            nxw = cto * c_normal[ci, 0] - sto * c_normal[ci, 1]
            nyw = sto * c_normal[ci, 0] + cto * c_normal[ci, 1]
            # Anchor point: material point for point contacts, the limb position
            # for surface contacts (exact once the in-surface rows hold).
            if c_geom[ci] == 0:
                px, py, _, _, _, _ = _contact_world(obj_kind, axis, q, c_point, ci)
                anchor_is_ee = False
            else:
                px = x[3 + 2 * e]
                py = x[3 + 2 * e + 1]
                anchor_is_ee = True
            rx = px - ox
            ry = py - oy
            # Object-side point velocity vpt and its partials.
            if obj_kind == 0:
                vptx = -ry * v[0]
                vpty = rx * v[0]
            else:
                vptx = v[0] - ry * v[2]
                vpty = v[1] + rx * v[2]
            fx = u[3 + 3 * n_e + 2 * e]
            fy = u[3 + 3 * n_e + 2 * e + 1]

            if st_e == CLOSED:
                if fammask[FAM_RELVEL]:
                    for d in range(2):
                        uv = u[3 + 2 * e + d]
                        vp = vptx if d == 0 else vpty
                        rr = (uv - vp) / SCALE_VEL
                        res[nr] = sqrho * rr
                        raw[nr] = rr
                        if want_grad:
                            f = sqrho / SCALE_VEL
                            gu[nr, 3 + 2 * e + d] = f
                            if obj_kind == 0:
                                # vpt = perp(r) * w: dvpt/dw, dvpt/dq
                                gx[nr, iv] = -f * (-ry if d == 0 else rx)
                                if not anchor_is_ee:
                                    # dr/dq = perp(r) -> dvpt/dq = -r * w
                                    gx[nr, iq] = -f * ((-rx * v[0]) if d == 0 else (-ry * v[0]))
                                else:
                                    gx[nr, 3 + 2 * e] = -f * (0.0 if d == 0 else v[0])
                                    gx[nr, 3 + 2 * e + 1] = -f * (-v[0] if d == 0 else 0.0)
                            else:
                                gx[nr, iv + d] = -f
                                gx[nr, iv + 2] = -f * (-ry if d == 0 else rx)
                                if not anchor_is_ee:
                                    # dr/dtheta = perp(r); dvpt/dtheta = -w r
                                    gx[nr, iq + 2] = -f * ((-v[2] * rx) if d == 0 else (-v[2] * ry))
                                else:
                                    # r = ee - c: dvpt/dc = +w*perp-ish, dvpt/dee
                                    gx[nr, iq + (1 - d)] = -f * (v[2] if d == 0 else -v[2])
                                    gx[nr, 3 + 2 * e + (1 - d)] = -f * (-v[2] if d == 0 else v[2])
                        rstep[nr] = k
                        rfam[nr] = FAM_RELVEL
                        nr += 1
                if c_preh[ci] == 0:
                    if fammask[FAM_UNILATERAL]:
                        g = nxw * fx + nyw * fy
                        if g < 0.0:
                            res[nr] = sqrho * (-g) / SCALE_FORCE
                            raw[nr] = -g / SCALE_FORCE
                            if want_grad:
                                f = -sqrho / SCALE_FORCE
                                gu[nr, 3 + 3 * n_e + 2 * e] = f * nxw
                                gu[nr, 3 + 3 * n_e + 2 * e + 1] = f * nyw
                                dg_dth = (-nyw) * fx + nxw * fy
                                if obj_kind == 0:
                                    gx[nr, iq] = f * dg_dth
                                else:
                                    gx[nr, iq + 2] = f * dg_dth
                            rstep[nr] = k
                            rfam[nr] = FAM_UNILATERAL
                            nr += 1
                    if fammask[FAM_CONE]:
                        tn = fx * nxw + fy * nyw
                        tt = fx * (-nyw) + fy * nxw
                        s = 1.0 if tt >= 0.0 else -1.0
                        g = mu_s * tn - s * tt
                        if g < 0.0:
                            res[nr] = sqrho * (-g) / SCALE_FORCE
                            raw[nr] = -g / SCALE_FORCE
                            if want_grad:
                                f = -sqrho / SCALE_FORCE
                                gu[nr, 3 + 3 * n_e + 2 * e] = f * (mu_s * nxw - s * (-nyw))
                                gu[nr, 3 + 3 * n_e + 2 * e + 1] = f * (mu_s * nyw - s * nxw)
                                dtn = (-nyw) * fx + nxw * fy
                                dtt = (-nxw) * fx + (-nyw) * fy
                                if obj_kind == 0:
                                    gx[nr, iq] = f * (mu_s * dtn - s * dtt)
                                else:
                                    gx[nr, iq + 2] = f * (mu_s * dtn - s * dtt)
                            rstep[nr] = k
                            rfam[nr] = FAM_CONE
                            nr += 1
                    if fammask[FAM_TANGENT_FORCE] and tangent_zero_on == 1:
                        tt = fx * (-nyw) + fy * nxw
                        rr = tt / SCALE_FORCE
                        res[nr] = sqrho * rr
                        raw[nr] = rr
                        if want_grad:
                            f = sqrho / SCALE_FORCE
                            gu[nr, 3 + 3 * n_e + 2 * e] = f * (-nyw)
                            gu[nr, 3 + 3 * n_e + 2 * e + 1] = f * nxw
                            dtt = (-nxw) * fx + (-nyw) * fy
                            if obj_kind == 0:
                                gx[nr, iq] = f * dtt
                            else:
                                gx[nr, iq + 2] = f * dtt
                        rstep[nr] = k
                        rfam[nr] = FAM_TANGENT_FORCE
                        nr += 1
                else:
                    if fammask[FAM_HEAD_RATE]:
                        wobj = v[0] if obj_kind == 0 else v[2]
                        rr = (u[3 + 2 * n_e + e] - wobj) / SCALE_VEL
                        res[nr] = sqrho * rr
                        raw[nr] = rr
                        if want_grad:
                            f = sqrho / SCALE_VEL
                            gu[nr, 3 + 2 * n_e + e] = f
                            if obj_kind == 0:
                                gx[nr, iv] = -f
                            else:
                                gx[nr, iv + 2] = -f
                        rstep[nr] = k
                        rfam[nr] = FAM_HEAD_RATE
                        nr += 1

            kind_sv = swvel_kind[k, e]
            if kind_sv != 0:
                fam = FAM_APPROACH if kind_sv == 1 else FAM_RETRACT
                if fammask[fam]:
                    relx = u[3 + 2 * e] - vptx
                    rely = u[3 + 2 * e + 1] - vpty
                    rr = (nxw * relx + nyw * rely - swvel_ref[k, e]) / SCALE_VEL
                    res[nr] = sqrho * rr
                    raw[nr] = rr
                    if want_grad:
                        f = sqrho / SCALE_VEL
                        gu[nr, 3 + 2 * e] = f * nxw
                        gu[nr, 3 + 2 * e + 1] = f * nyw
                        # Normal rotates with the object; vpt moves with the
                        # anchor (material point or limb position).
                        dn = (-nyw) * relx + nxw * rely
                        if obj_kind == 0:
                            gx[nr, iv] = -f * (nxw * (-ry) + nyw * rx)
                            if c_geom[ci] == 0:
                                gx[nr, iq] = f * (dn + v[0] * (nxw * rx + nyw * ry))
                            else:
                                gx[nr, iq] = f * dn
                                gx[nr, 3 + 2 * e] = -f * nyw * v[0]
                                gx[nr, 3 + 2 * e + 1] = f * nxw * v[0]
                        else:
                            gx[nr, iv] = -f * nxw
                            gx[nr, iv + 1] = -f * nyw
                            gx[nr, iv + 2] = -f * (nxw * (-ry) + nyw * rx)
                            if c_geom[ci] == 0:
                                gx[nr, iq + 2] = f * (dn + v[2] * (nxw * rx + nyw * ry))
                            else:
                                gx[nr, iq + 2] = f * dn
                                gx[nr, iq] = f * nyw * v[2]
                                gx[nr, iq + 1] = -f * nxw * v[2]
                                gx[nr, 3 + 2 * e] = -f * nyw * v[2]
                                gx[nr, 3 + 2 * e + 1] = f * nxw * v[2]
                    rstep[nr] = k
                    rfam[nr] = fam
                    nr += 1
    return nr


@njit(cache=True)
def assemble_jacobian(res_gx, res_gu, rstep, n_rows, S, K, nu):
    """Chain per-row partials through the rollout sensitivities."""
    nx = S.shape[1]
    nU = K * nu
    J = np.zeros((n_rows, nU))
    for i in range(n_rows):
        k = rstep[i]
        ncols = k * nu if k < K else nU
        for j in range(ncols):
            acc = 0.0
            for m in range(nx):
                g = res_gx[i, m]
                if g != 0.0:
                    acc += g * S[k, m, j]
            J[i, j] = acc
        if k < K:
            for j in range(nu):
                J[i, k * nu + j] += res_gu[i, j]
    return J


@njit(cache=True)
def adjoint_gradient(res, res_gx, res_gu, rstep, n_rows, A, B, K):
    """Gradient of sum(res^2) w.r.t. the stacked inputs via a backward sweep."""
    nx = A.shape[1]
    nu = B.shape[2]
    Gx = np.zeros((K + 1, nx))
    Gu = np.zeros((K, nu))
    for i in range(n_rows):
        k = rstep[i]
        for m in range(nx):
            g = res_gx[i, m]
            if g != 0.0:
                Gx[k, m] += 2.0 * res[i] * g
        if k < K:
            for j in range(nu):
                g = res_gu[i, j]
                if g != 0.0:
                    Gu[k, j] += 2.0 * res[i] * g
    grad = np.zeros(K * nu)
    lam = Gx[K].copy()
    for k in range(K - 1, -1, -1):
        for j in range(nu):
            acc = Gu[k, j]
            for m in range(nx):
                bmj = B[k, m, j]
                if bmj != 0.0:
                    acc += bmj * lam[m]
            grad[k * nu + j] = acc
        lam_new = Gx[k].copy()
        for m in range(nx):
            acc = 0.0
            for i in range(nx):
                aim = A[k, i, m]
                if aim != 0.0:
                    acc += aim * lam[i]
            lam_new[m] += acc
        lam = lam_new
    return grad
