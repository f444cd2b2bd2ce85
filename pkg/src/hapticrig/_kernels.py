"""Numba-compiled numeric kernels.

Everything in this file operates on plain float64/int64 ndarrays so the whole
1 kHz control path runs inside compiled code.  The public modules (chain,
limits, hqp, renderer) own validation and typed wrappers; kernels assume
well-formed inputs.

Packed chain layout (one serial chain):
    kinds   (n,) int64      0 = revolute, 1 = prismatic
    th_off  (n,) float64    theta offset added to q (revolute) or fixed theta
    d_off   (n,) float64    d offset added to q (prismatic) or fixed d
    a_len   (n,) float64    DH a
    ca, sa  (n,) float64    cos/sin of DH alpha (precomputed)
    baseR   (3,3)           world rotation of chain frame 0
    basep   (3,)            world position of chain frame 0
    mass    (n,)            per-link mass
    com     (n,3)           center of mass in link frame i+1
    inert   (n,3,3)         inertia about com in link frame i+1

Frame convention: classic DH, T_i = Rz(theta) Tz(d) Tx(a) Rx(alpha); frame 0
is the chain base expressed in world via (baseR, basep); frame i+1 sits after
row i.  Joint i actuates about/along the z axis of frame i.
"""

from __future__ import annotations

import numpy as np
from numba import njit

REVOLUTE = 0
PRISMATIC = 1

# QP solver status codes
QP_OK = 0
QP_INFEASIBLE = 1
QP_MAXITER = 2


# ----------------------------------------------------------------------------
# small linear algebra helpers
# ----------------------------------------------------------------------------


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def chol_factor(G):
    """Cholesky G = L L^T. Returns (L, ok). Works in-place on a copy."""
    n = G.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = G[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return L, False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return L, True


@njit(cache=True)
def chol_solve(L, b):
    """Solve (L L^T) x = b for one rhs vector."""
    n = L.shape[0]
    x = b.copy()
    for i in range(n):
        s = x[i]
        for k in range(i):
            s -= L[i, k] * x[k]
        x[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def gauss_solve(A, b):
    """Dense solve with partial pivoting; returns (x, ok)."""
    n = A.shape[0]
    M = A.copy()
    x = b.copy()
    for col in range(n):
        piv = col
        best = abs(M[col, col])
        for r in range(col + 1, n):
            v = abs(M[r, col])
            if v > best:
                best = v
                piv = r
        if best < 1e-300:
            return x, False
        if piv != col:
            for c in range(col, n):
                tmp = M[col, c]
                M[col, c] = M[piv, c]
                M[piv, c] = tmp
            tmp = x[col]
            x[col] = x[piv]
            x[piv] = tmp
        inv = 1.0 / M[col, col]
        for r in range(col + 1, n):
            f = M[r, col] * inv
            if f != 0.0:
                for c in range(col, n):
                    M[r, c] -= f * M[col, c]
                x[r] -= f * x[col]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, n):
            s -= M[i, k] * x[k]
        x[i] = s / M[i, i]
    return x, True


# ----------------------------------------------------------------------------
# chain kinematics
# ----------------------------------------------------------------------------


@njit(cache=True)
def chain_frames(kinds, th_off, d_off, a_len, ca, sa, baseR, basep, q):
    """All link frames in world coordinates: R (n+1,3,3), p (n+1,3)."""
    n = kinds.shape[0]
    R = np.empty((n + 1, 3, 3))
    p = np.empty((n + 1, 3))
    for r in range(3):
        for c in range(3):
            R[0, r, c] = baseR[r, c]
        p[0, r] = basep[r]
    for i in range(n):
        if kinds[i] == REVOLUTE:
            th = q[i] + th_off[i]
            dd = d_off[i]
        else:
            th = th_off[i]
            dd = q[i] + d_off[i]
        ct = np.cos(th)
        st = np.sin(th)
        cai = ca[i]
        sai = sa[i]
        # local rotation Rz(th) * Rx(alpha)
        l00 = ct
        l01 = -st * cai
        l02 = st * sai
        l10 = st
        l11 = ct * cai
        l12 = -ct * sai
        l20 = 0.0
        l21 = sai
        l22 = cai
        # local translation (a ct, a st, d)
        tx = a_len[i] * ct
        ty = a_len[i] * st
        tz = dd
        for r in range(3):
            r0 = R[i, r, 0]
            r1 = R[i, r, 1]
            r2 = R[i, r, 2]
            R[i + 1, r, 0] = r0 * l00 + r1 * l10 + r2 * l20
            R[i + 1, r, 1] = r0 * l01 + r1 * l11 + r2 * l21
            R[i + 1, r, 2] = r0 * l02 + r1 * l12 + r2 * l22
            p[i + 1, r] = p[i, r] + r0 * tx + r1 * ty + r2 * tz
    return R, p


@njit(cache=True)
def frame_rates(kinds, R, p, dq):
    """Angular/linear velocities of every frame origin (world)."""
    n = kinds.shape[0]
    w = np.zeros((n + 1, 3))
    v = np.zeros((n + 1, 3))
    for i in range(n):
        zx = R[i, 0, 2]
        zy = R[i, 1, 2]
        zz = R[i, 2, 2]
        rx = p[i + 1, 0] - p[i, 0]
        ry = p[i + 1, 1] - p[i, 1]
        rz = p[i + 1, 2] - p[i, 2]
        if kinds[i] == REVOLUTE:
            wx = w[i, 0] + zx * dq[i]
            wy = w[i, 1] + zy * dq[i]
            wz = w[i, 2] + zz * dq[i]
            w[i + 1, 0] = wx
            w[i + 1, 1] = wy
            w[i + 1, 2] = wz
            v[i + 1, 0] = v[i, 0] + wy * rz - wz * ry
            v[i + 1, 1] = v[i, 1] + wz * rx - wx * rz
            v[i + 1, 2] = v[i, 2] + wx * ry - wy * rx
        else:
            wx = w[i, 0]
            wy = w[i, 1]
            wz = w[i, 2]
            w[i + 1, 0] = wx
            w[i + 1, 1] = wy
            w[i + 1, 2] = wz
            v[i + 1, 0] = v[i, 0] + wy * rz - wz * ry + zx * dq[i]
            v[i + 1, 1] = v[i, 1] + wz * rx - wx * rz + zy * dq[i]
            v[i + 1, 2] = v[i, 2] + wx * ry - wy * rx + zz * dq[i]
    return w, v


@njit(cache=True)
def jacobian_k(kinds, R, p, fi, pt):
    """Geometric Jacobian (6,n) of a point pt (world) attached to frame fi."""
    n = kinds.shape[0]
    J = np.zeros((6, n))
    for j in range(fi):
        zx = R[j, 0, 2]
        zy = R[j, 1, 2]
        zz = R[j, 2, 2]
        if kinds[j] == REVOLUTE:
            rx = pt[0] - p[j, 0]
            ry = pt[1] - p[j, 1]
            rz = pt[2] - p[j, 2]
            J[0, j] = zy * rz - zz * ry
            J[1, j] = zz * rx - zx * rz
            J[2, j] = zx * ry - zy * rx
            J[3, j] = zx
            J[4, j] = zy
            J[5, j] = zz
        else:
            J[0, j] = zx
            J[1, j] = zy
            J[2, j] = zz
    return J


@njit(cache=True)
def jacobian_dot_k(kinds, R, p, w, v, dq, fi, pt, J):
    """Time derivative of jacobian_k along (q, dq).

    Needs the frame rates (w, v) and the Jacobian J of the same point to
    recover the point velocity.
    """
    n = kinds.shape[0]
    Jd = np.zeros((6, n))
    vptx = 0.0
    vpty = 0.0
    vptz = 0.0
    for j in range(n):
        vptx += J[0, j] * dq[j]
        vpty += J[1, j] * dq[j]
        vptz += J[2, j] * dq[j]
    for j in range(fi):
        zx = R[j, 0, 2]
        zy = R[j, 1, 2]
        zz = R[j, 2, 2]
        # z_dot = w_j x z
        zdx = w[j, 1] * zz - w[j, 2] * zy
        zdy = w[j, 2] * zx - w[j, 0] * zz
        zdz = w[j, 0] * zy - w[j, 1] * zx
        if kinds[j] == REVOLUTE:
            rx = pt[0] - p[j, 0]
            ry = pt[1] - p[j, 1]
            rz = pt[2] - p[j, 2]
            rdx = vptx - v[j, 0]
            rdy = vpty - v[j, 1]
            rdz = vptz - v[j, 2]
            Jd[0, j] = zdy * rz - zdz * ry + zy * rdz - zz * rdy
            Jd[1, j] = zdz * rx - zdx * rz + zz * rdx - zx * rdz
            Jd[2, j] = zdx * ry - zdy * rx + zx * rdy - zy * rdx
            Jd[3, j] = zdx
            Jd[4, j] = zdy
            Jd[5, j] = zdz
        else:
            Jd[0, j] = zdx
            Jd[1, j] = zdy
            Jd[2, j] = zdz
    return Jd


# ----------------------------------------------------------------------------
# chain dynamics
# ----------------------------------------------------------------------------


@njit(cache=True)
def rnea_k(kinds, R, p, dq, ddq, mass, com, inert, grav):
    """Recursive Newton-Euler inverse dynamics: tau for given (q, dq, ddq).

    Gravity handled by accelerating the base at -grav.
    """
    n = kinds.shape[0]
    w = np.zeros((n + 1, 3))
    dw = np.zeros((n + 1, 3))
    a = np.zeros((n + 1, 3))
    a[0, 0] = -grav[0]
    a[0, 1] = -grav[1]
    a[0, 2] = -grav[2]
    Fl = np.empty((n, 3))
    Nl = np.empty((n, 3))
    cw = np.empty((n, 3))
    for i in range(n):
        z = R[i, :, 2].copy()
        r = p[i + 1] - p[i]
        if kinds[i] == REVOLUTE:
            wn = w[i] + z * dq[i]
            dwn = dw[i] + _cross(w[i], z * dq[i]) + z * ddq[i]
            an = a[i] + _cross(dwn, r) + _cross(wn, _cross(wn, r))
        else:
            wn = w[i]
            dwn = dw[i]
            an = (
                a[i]
                + _cross(dwn, r)
                + _cross(wn, _cross(wn, r))
                + 2.0 * dq[i] * _cross(wn, z)
                + z * ddq[i]
            )
        w[i + 1] = wn
        dw[i + 1] = dwn
        a[i + 1] = an
        # com position/acceleration, world inertia
        ci = R[i + 1] @ com[i] + p[i + 1]
        cw[i] = ci
        rc = ci - p[i + 1]
        ac = an + _cross(dwn, rc) + _cross(wn, _cross(wn, rc))
        Iw = R[i + 1] @ inert[i] @ R[i + 1].T
        Fl[i] = mass[i] * ac
        Nl[i] = Iw @ dwn + _cross(wn, Iw @ wn)
    tau = np.zeros(n)
    f = np.zeros(3)
    nn = np.zeros(3)
    for i in range(n - 1, -1, -1):
        # transfer child aggregate from p[i+1] to p[i], add this link
        nn = nn + Nl[i] + _cross(cw[i] - p[i], Fl[i]) + _cross(p[i + 1] - p[i], f)
        f = f + Fl[i]
        z = R[i, :, 2]
        if kinds[i] == REVOLUTE:
            tau[i] = z[0] * nn[0] + z[1] * nn[1] + z[2] * nn[2]
        else:
            tau[i] = z[0] * f[0] + z[1] * f[1] + z[2] * f[2]
    return tau


@njit(cache=True)
def crba_k(kinds, R, p, mass, com, inert):
    """Composite-rigid-body joint-space inertia matrix.

    Spatial quantities are referred to the world origin with twist layout
    (v_origin, omega).
    """
    n = kinds.shape[0]
    # motion subspace of each joint at the world origin
    Phi = np.zeros((n, 6))
    for j in range(n):
        zx = R[j, 0, 2]
        zy = R[j, 1, 2]
        zz = R[j, 2, 2]
        if kinds[j] == REVOLUTE:
            Phi[j, 0] = p[j, 1] * zz - p[j, 2] * zy
            Phi[j, 1] = p[j, 2] * zx - p[j, 0] * zz
            Phi[j, 2] = p[j, 0] * zy - p[j, 1] * zx
            Phi[j, 3] = zx
            Phi[j, 4] = zy
            Phi[j, 5] = zz
        else:
            Phi[j, 0] = zx
            Phi[j, 1] = zy
            Phi[j, 2] = zz
    # composite spatial inertias, suffix-summed
    Ic = np.zeros((n, 6, 6))
    acc = np.zeros((6, 6))
    for i in range(n - 1, -1, -1):
        m = mass[i]
        c = R[i + 1] @ com[i] + p[i + 1]
        Iw = R[i + 1] @ inert[i] @ R[i + 1].T
        cx = np.zeros((3, 3))
        cx[0, 1] = -c[2]
        cx[0, 2] = c[1]
        cx[1, 0] = c[2]
        cx[1, 2] = -c[0]
        cx[2, 0] = -c[1]
        cx[2, 1] = c[0]
        Io = Iw - m * (cx @ cx)
        for r in range(3):
            for s in range(3):
                acc[r, s] += m * (1.0 if r == s else 0.0)
                acc[r, 3 + s] += -m * cx[r, s]
                acc[3 + r, s] += m * cx[r, s]
                acc[3 + r, 3 + s] += Io[r, s]
        Ic[i] = acc
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            # M[i,j] = Phi_i^T Ic_j Phi_j for i <= j
            s = 0.0
            for r in range(6):
                t = 0.0
                for cc in range(6):
                    t += Ic[j, r, cc] * Phi[j, cc]
                s += Phi[i, r] * t
            M[i, j] = s
            M[j, i] = s
    return M


# ----------------------------------------------------------------------------
# rotation small helpers
# ----------------------------------------------------------------------------


@njit(cache=True)
def rotlog(Rm):
    """Rotation vector r*gamma of a rotation matrix.

    Near gamma = pi the axis comes from the dominant eigenvector of
    (R + R^T)/2 - cos(gamma) I with the first nonzero component forced
    positive, which keeps the result deterministic where the skew part
    vanishes.
    """
    tr = Rm[0, 0] + Rm[1, 1] + Rm[2, 2]
    cg = 0.5 * (tr - 1.0)
    if cg > 1.0:
        cg = 1.0
    if cg < -1.0:
        cg = -1.0
    gamma = np.arccos(cg)
    out = np.empty(3)
    vx = 0.5 * (Rm[2, 1] - Rm[1, 2])
    vy = 0.5 * (Rm[0, 2] - Rm[2, 0])
    vz = 0.5 * (Rm[1, 0] - Rm[0, 1])
    sg = np.sin(gamma)
    if gamma < 1e-7:
        # r*gamma ~ vee to first order
        out[0] = vx
        out[1] = vy
        out[2] = vz
        return out
    if sg > 1e-6:
        f = gamma / sg
        out[0] = vx * f
        out[1] = vy * f
        out[2] = vz * f
        return out
    # gamma ~ pi: eigen decomposition route
    B = np.empty((3, 3))
    for r in range(3):
        for c in range(3):
            B[r, c] = 0.5 * (Rm[r, c] + Rm[c, r])
        B[r, r] -= cg
    vals, vecs = np.linalg.eigh(B)
    # dominant eigenvector
    axis = vecs[:, 2].copy()
    for k in range(3):
        if abs(axis[k]) > 1e-12:
            if axis[k] < 0.0:
                axis = -axis
            break
    nrm = np.sqrt(axis[0] ** 2 + axis[1] ** 2 + axis[2] ** 2)
    out[0] = axis[0] / nrm * gamma
    out[1] = axis[1] / nrm * gamma
    out[2] = axis[2] / nrm * gamma
    return out


# ----------------------------------------------------------------------------
# joint-limit acceleration intervals
# ----------------------------------------------------------------------------


@njit(cache=True)
def interval_pos_k(q, dq, qmin, qmax, ddqmax, dt):
    """Interval 1: position limits (next-step + no committed overshoot)."""
    n = q.shape[0]
    lb = np.empty(n)
    ub = np.empty(n)
    dt2 = dt * dt
    for i in range(n):
        if np.isinf(qmax[i]):
            u = np.inf
        else:
            u = 2.0 * (qmax[i] - q[i] - dt * dq[i]) / dt2
            if dq[i] > 0.0 and not np.isinf(ddqmax[i]):
                gap = qmax[i] - q[i]
                if gap > 0.0 and gap < dq[i] * dq[i] / (2.0 * ddqmax[i]):
                    brake = -dq[i] * dq[i] / (2.0 * gap)
                    if brake < u:
                        u = brake
        if np.isinf(qmin[i]):
            l = -np.inf
        else:
            l = 2.0 * (qmin[i] - q[i] - dt * dq[i]) / dt2
            if dq[i] < 0.0 and not np.isinf(ddqmax[i]):
                gap = q[i] - qmin[i]
                if gap > 0.0 and gap < dq[i] * dq[i] / (2.0 * ddqmax[i]):
                    brake = dq[i] * dq[i] / (2.0 * gap)
                    if brake > l:
                        l = brake
        lb[i] = l
        ub[i] = u
    return lb, ub


@njit(cache=True)
def interval_vel_k(dq, dqmax, dt):
    """Interval 2: velocity limits over one step."""
    n = dq.shape[0]
    lb = np.empty(n)
    ub = np.empty(n)
    for i in range(n):
        if np.isinf(dqmax[i]):
            lb[i] = -np.inf
            ub[i] = np.inf
        else:
            lb[i] = (-dqmax[i] - dq[i]) / dt
            ub[i] = (dqmax[i] - dq[i]) / dt
    return lb, ub


@njit(cache=True)
def interval_viab_k(q, dq, qmin, qmax, ddqmax, dt):
    """Interval 3: keep the next state viable (can still brake in time).

    Returns (lb, ub, empty) where empty flags a negative discriminant.
    """
    n = q.shape[0]
    lb = np.empty(n)
    ub = np.empty(n)
    empty = np.zeros(n, dtype=np.int64)
    dt2 = dt * dt
    for i in range(n):
        A = ddqmax[i]
        if np.isinf(A):
            lb[i] = -np.inf
            ub[i] = np.inf
            continue
        if np.isinf(qmax[i]):
            u = np.inf
        else:
            bb = 2.0 * dq[i] * dt + A * dt2
            cc = dq[i] * dq[i] - 2.0 * A * (qmax[i] - q[i] - dt * dq[i])
            disc = bb * bb - 4.0 * dt2 * cc
            if disc < 0.0:
                empty[i] = 1
                u = -np.inf
            else:
                u = (-bb + np.sqrt(disc)) / (2.0 * dt2)
        if np.isinf(qmin[i]):
            l = -np.inf
        else:
            bb = 2.0 * dq[i] * dt - A * dt2
            cc = dq[i] * dq[i] - 2.0 * A * (q[i] - qmin[i] + dt * dq[i])
            disc = bb * bb - 4.0 * dt2 * cc
            if disc < 0.0:
                empty[i] = 1
                l = np.inf
            else:
                l = (-bb - np.sqrt(disc)) / (2.0 * dt2)
        lb[i] = l
        ub[i] = u
    return lb, ub, empty


@njit(cache=True)
def _fallback_pick(l1, u1, olb, oub):
    """Point of [olb, oub] nearest to the interval-1 set [l1, u1]."""
    if u1 < olb:
        return olb
    if l1 > oub:
        return oub
    # overlapping: midpoint of overlap (only hit when caller logic degrades)
    lo = max(l1, olb)
    hi = min(u1, oub)
    return 0.5 * (lo + hi)


@njit(cache=True)
def bounds_a_k(q, dq, qmin, qmax, dqmax, ddqmax, dt):
    """Intersection of intervals 1 and 2 with the documented fallback.

    Returns (lb, ub, fallback_flags).
    """
    n = q.shape[0]
    l1, u1 = interval_pos_k(q, dq, qmin, qmax, ddqmax, dt)
    l2, u2 = interval_vel_k(dq, dqmax, dt)
    lb = np.empty(n)
    ub = np.empty(n)
    flag = np.zeros(n, dtype=np.int64)
    for i in range(n):
        lo = max(l1[i], l2[i])
        hi = min(u1[i], u2[i])
        if lo <= hi:
            lb[i] = lo
            ub[i] = hi
        else:
            flag[i] = 1
            x = _fallback_pick(l1[i], u1[i], l2[i], u2[i])
            lb[i] = x
            ub[i] = x
    return lb, ub, flag


@njit(cache=True)
def bounds_b_k(q, dq, qmin, qmax, dqmax, ddqmax, dt):
    """Intersection of intervals 1-4 with the documented fallback.

    Returns (lb, ub, fallback_flags).
    """
    n = q.shape[0]
    l1, u1 = interval_pos_k(q, dq, qmin, qmax, ddqmax, dt)
    l2, u2 = interval_vel_k(dq, dqmax, dt)
    l3, u3, e3 = interval_viab_k(q, dq, qmin, qmax, ddqmax, dt)
    lb = np.empty(n)
    ub = np.empty(n)
    flag = np.zeros(n, dtype=np.int64)
    for i in range(n):
        l4 = -ddqmax[i]
        u4 = ddqmax[i]
        # other-interval intersection (2, 3, 4)
        olb = max(l2[i], l4)
        oub = min(u2[i], u4)
        if e3[i] == 0:
            if l3[i] > olb:
                olb = l3[i]
            if u3[i] < oub:
                oub = u3[i]
        lo = max(l1[i], olb)
        hi = min(u1[i], oub)
        if e3[i] == 0 and lo <= hi:
            lb[i] = lo
            ub[i] = hi
        else:
            flag[i] = 1
            if olb > oub:
                # even 2,3,4 conflict: fall back to 2 cap 4, then 4 alone
                olb = max(l2[i], l4)
                oub = min(u2[i], u4)
                if olb > oub:
                    olb = l4
                    oub = u4
            x = _fallback_pick(l1[i], u1[i], olb, oub)
            lb[i] = x
            ub[i] = x
    return lb, ub, flag


@njit(cache=True)
def bounds_c_k(q, dq, qmin, qmax, dt):
    """Second-order-Taylor position bounds (tolerant of violations)."""
    n = q.shape[0]
    lb = np.empty(n)
    ub = np.empty(n)
    dt2 = dt * dt
    for i in range(n):
        if np.isinf(qmin[i]):
            lb[i] = -np.inf
        else:
            lb[i] = 2.0 * (qmin[i] - q[i] - dt * dq[i]) / dt2
        if np.isinf(qmax[i]):
            ub[i] = np.inf
        else:
            ub[i] = 2.0 * (qmax[i] - q[i] - dt * dq[i]) / dt2
    return lb, ub


@njit(cache=True)
def clamp_viable_k(q, dq, qmin, qmax, dqmax, ddqmax):
    """Clamp (q, dq) into the viable set."""
    n = q.shape[0]
    qc = np.empty(n)
    dqc = np.empty(n)
    for i in range(n):
        x = q[i]
        if x < qmin[i]:
            x = qmin[i]
        if x > qmax[i]:
            x = qmax[i]
        v = dq[i]
        if v > dqmax[i]:
            v = dqmax[i]
        if v < -dqmax[i]:
            v = -dqmax[i]
        if not np.isinf(ddqmax[i]):
            if not np.isinf(qmax[i]):
                cap = np.sqrt(max(2.0 * ddqmax[i] * (qmax[i] - x), 0.0))
                if v > cap:
                    v = cap
            if not np.isinf(qmin[i]):
                cap = np.sqrt(max(2.0 * ddqmax[i] * (x - qmin[i]), 0.0))
                if v < -cap:
                    v = -cap
        qc[i] = x
        dqc[i] = v
    return qc, dqc


# ----------------------------------------------------------------------------
# dense active-set QP (Goldfarb-Idnani style dual method)
# ----------------------------------------------------------------------------


@njit(cache=True)
def qp_gi(G, g, C, lb, ub, max_iter):
    """Minimize 1/2 x^T G x + g^T x  s.t.  lb <= C x <= ub.

    G must be symmetric positive definite.  Rows with infinite bounds on one
    side contribute a single one-sided constraint; both-infinite rows are
    ignored.  Deterministic most-violated selection with lowest-index
    tie-breaking.  Rows already held in the working set are never candidates
    again: reselecting the same side would duplicate a normal and selecting
    the opposite side of a near-degenerate row (lb ~ ub) would add an
    anti-parallel normal, both of which make the dual system singular.

    Returns (x, status, iters, act, na): act[:na] holds the working-set
    constraint ids k = 2*row + side (0 = lb, 1 = ub).
    """
    nv = G.shape[0]
    m = C.shape[0]
    act = np.empty(nv + 1, dtype=np.int64)
    L, ok = chol_factor(G)
    if not ok:
        return np.zeros(nv), QP_INFEASIBLE, 0, act, 0
    x = -chol_solve(L, g)
    if m == 0:
        return x, QP_OK, 0, act, 0
    # G^-1 C^T (nv, m) and C G^-1 C^T (m, m), filled on first violation:
    # a level whose start point is already feasible never pays for them
    GiCt = np.empty((nv, m))
    W = np.empty((m, m))
    tables_ready = False
    cvals = C @ x
    # row norms, part of the feasibility scale: the value C_j x carries
    # rounding of order eps * |C_j| * |x|, so a bound can only be met to
    # within that resolution
    cn = np.empty(m)
    for j in range(m):
        s = 0.0
        for t in range(nv):
            s += C[j, t] * C[j, t]
        cn[j] = np.sqrt(s)
    # active set bookkeeping: constraint id k = 2*row + side (0=lb, 1=ub)
    u = np.zeros(nv + 1)
    in_set = np.zeros(m, dtype=np.int8)  # 0 free, 1 some side active
    na = 0
    iters = 0
    for _outer in range(max_iter):
        # re-sync constraint values from the current iterate: the incremental
        # updates below amplify rounding when G is ill-conditioned, and a
        # drifted converged point would poison later levels of a hierarchy
        for j in range(m):
            s = 0.0
            for t in range(nv):
                s += C[j, t] * x[t]
            cvals[j] = s
        # most violated constraint among rows not already in the working set;
        # the scale includes |C_j||x| so rows violated by no more than the
        # rounding floor of evaluating them are treated as satisfied
        xn = 0.0
        for t in range(nv):
            xn += x[t] * x[t]
        xn = np.sqrt(xn)
        worst = -1e-11
        ksel = -1
        for j in range(m):
            if in_set[j] != 0:
                continue
            scale = 1.0 + abs(cvals[j]) + cn[j] * xn
            if not np.isinf(lb[j]):
                viol = cvals[j] - lb[j]
                if viol / scale < worst:
                    worst = viol / scale
                    ksel = 2 * j
            if not np.isinf(ub[j]):
                viol = ub[j] - cvals[j]
                if viol / scale < worst:
                    worst = viol / scale
                    ksel = 2 * j + 1
        if ksel < 0:
            return x, QP_OK, iters, act, na
        if not tables_ready:
            for j in range(m):
                GiCt[:, j] = chol_solve(L, C[j].copy())
            W[:, :] = C @ GiCt
            tables_ready = True
        jrow = ksel >> 1
        sgn = 1.0 if (ksel & 1) == 0 else -1.0
        bk = lb[jrow] if (ksel & 1) == 0 else -ub[jrow]
        uplus = 0.0
        # inner loop: dual iterations for this constraint
        for _inner in range(max_iter):
            iters += 1
            sviol = sgn * cvals[jrow] - bk  # negative while violated
            # direction in primal space: z = H n+, dual: r = S^-1 N^T Gi n+
            r = np.zeros(na)
            if na > 0:
                S = np.empty((na, na))
                wv = np.empty(na)
                for a1 in range(na):
                    ka = act[a1]
                    ja = ka >> 1
                    sa_ = 1.0 if (ka & 1) == 0 else -1.0
                    wv[a1] = sa_ * sgn * W[ja, jrow]
                    for a2 in range(na):
                        kb = act[a2]
                        jb = kb >> 1
                        sb = 1.0 if (kb & 1) == 0 else -1.0
                        S[a1, a2] = sa_ * sb * W[ja, jb]
                r, okS = gauss_solve(S, wv)
                if not okS:
                    return x, QP_MAXITER, iters, act, na
            z = sgn * GiCt[:, jrow].copy()
            for a1 in range(na):
                ka = act[a1]
                ja = ka >> 1
                sa_ = 1.0 if (ka & 1) == 0 else -1.0
                coef = r[a1] * sa_
                if coef != 0.0:
                    for t in range(nv):
                        z[t] -= coef * GiCt[t, ja]
            # step lengths
            t1 = np.inf
            ldrop = -1
            for a1 in range(na):
                if r[a1] > 1e-13:
                    tt = u[a1] / r[a1]
                    if tt < t1:
                        t1 = tt
                        ldrop = a1
            zn = 0.0
            nn_ = 0.0
            denom = 0.0
            for t in range(nv):
                zv = z[t]
                nv_ = sgn * C[jrow, t]
                zn += zv * zv
                nn_ += nv_ * nv_
                denom += zv * nv_
            zn = np.sqrt(zn)
            nn_ = np.sqrt(nn_)
            full_ok = denom > 1e-11 * (1.0 + zn * nn_)
            t2 = np.inf
            if full_ok:
                t2 = -sviol / denom
                if t2 < 0.0:
                    t2 = 0.0
            if not full_ok and t1 == np.inf:
                # No primal direction and nothing to drop.  When the selected
                # row is violated by no more than rounding at the iterate's
                # scale this is arithmetic exhaustion at the optimum, not an
                # infeasibility certificate: accept the point as converged.
                xn2 = 0.0
                for t in range(nv):
                    xn2 += x[t] * x[t]
                if -sviol <= 1e-9 * (1.0 + abs(cvals[jrow]) + cn[jrow] * np.sqrt(xn2)):
                    return x, QP_OK, iters, act, na
                return x, QP_INFEASIBLE, iters, act, na
            tstep = t1 if t1 < t2 else t2
            # dual update
            for a1 in range(na):
                u[a1] -= tstep * r[a1]
            uplus += tstep
            if full_ok:
                # primal update
                for t in range(nv):
                    x[t] += tstep * z[t]
                for j2 in range(m):
                    dot = 0.0
                    for t in range(nv):
                        dot += C[j2, t] * z[t]
                    cvals[j2] += tstep * dot
            if t2 <= t1:
                # full step: add constraint
                act[na] = ksel
                u[na] = uplus
                in_set[jrow] = 1
                na += 1
                break
            # partial step: drop blocking constraint
            in_set[act[ldrop] >> 1] = 0
            na -= 1
            for a1 in range(ldrop, na):
                act[a1] = act[a1 + 1]
                u[a1] = u[a1 + 1]
    return x, QP_MAXITER, iters, act, na


# ----------------------------------------------------------------------------
# null-space bases and the packed hierarchical solve
# ----------------------------------------------------------------------------


@njit(cache=True)
def kernel_basis_k(A, rank_tol):
    """Orthonormal basis of kern(A); identity-like for zero/empty A."""
    m = A.shape[0]
    n = A.shape[1]
    if m == 0:
        return np.eye(n)
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    smax = 0.0
    for i in range(s.shape[0]):
        if s[i] > smax:
            smax = s[i]
    rank = 0
    for i in range(s.shape[0]):
        if s[i] > rank_tol * smax and s[i] > 0.0:
            rank += 1
    k = n - rank
    Z = np.empty((n, k))
    for c in range(k):
        for r in range(n):
            Z[r, c] = Vt[rank + c, r]
    return Z


@njit(cache=True)
def hqp_solve_k(
    N,
    nlev,
    A_all,
    ae_off,
    b_all,
    C_all,
    ci_off,
    flb_all,
    fub_all,
    rank_tol,
    eps_h,
    eps_z,
    eps_f,
    max_qp_iter,
):
    """Solve a packed task hierarchy.

    Returns (x, w_all, v_all, resid, ranks, nulldims, fails, eps_used,
    qp_iters).  w_all/v_all are the per-level equality/inequality slacks laid
    out like b_all/flb_all.
    """
    x = np.zeros(N)
    Z = np.eye(N)
    nz = N
    total_mi = ci_off[nlev]
    total_me = ae_off[nlev]
    w_all = np.zeros(total_me)
    v_all = np.zeros(total_mi)
    resid = np.zeros(nlev)
    ranks = np.zeros(nlev, dtype=np.int64)
    nulldims = np.zeros(nlev, dtype=np.int64)
    fails = np.zeros(nlev, dtype=np.int64)
    eps_used = np.zeros(nlev)
    qp_iters = np.zeros(nlev, dtype=np.int64)
    for p in range(nlev):
        me = ae_off[p + 1] - ae_off[p]
        mi = ci_off[p + 1] - ci_off[p]
        nprior = ci_off[p]
        nvar = nz + mi
        ncon = nprior + mi
        # objective
        H = np.zeros((nvar, nvar))
        gv = np.zeros(nvar)
        if me > 0 and nz > 0:
            AZ = A_all[ae_off[p] : ae_off[p + 1]] @ Z
            r0 = A_all[ae_off[p] : ae_off[p + 1]] @ x - b_all[ae_off[p] : ae_off[p + 1]]
            HZ = AZ.T @ AZ
            for r in range(nz):
                for c in range(nz):
                    H[r, c] = HZ[r, c]
                gg = 0.0
                for rr in range(me):
                    gg += AZ[rr, r] * r0[rr]
                gv[r] = gg
        for j in range(mi):
            H[nz + j, nz + j] = 1.0
        tr = 0.0
        for r in range(nvar):
            tr += H[r, r]
        eps = eps_h * (1.0 + tr / max(nvar, 1))
        # The z block is rank-deficient whenever the level's equalities do
        # not consume the whole remaining null space, so inflating it by only
        # eps would hand the dual QP a condition number near 1/eps_h and let
        # the active-set iterates drift through the pinned bounds.  Floor the
        # z inflation at the (much larger) eps_z scale; the refinement pass
        # below removes the bias it introduces.
        ez = eps_z * (1.0 + tr / max(nvar, 1))
        if ez < eps:
            ez = eps
        for r in range(nz):
            H[r, r] += ez
        for r in range(nz, nvar):
            H[r, r] += eps
        eps_used[p] = ez
        # constraints
        Cq = np.zeros((ncon, nvar))
        lo = np.empty(ncon)
        hi = np.empty(ncon)
        for rr in range(nprior):
            cx = 0.0
            cn2 = 0.0
            for t in range(N):
                cx += C_all[rr, t] * x[t]
                cn2 += C_all[rr, t] * C_all[rr, t]
            rn2 = 0.0
            for c in range(nz):
                s = 0.0
                for t in range(N):
                    s += C_all[rr, t] * Z[t, c]
                Cq[rr, c] = s
                rn2 += s * s
            if rn2 <= 1e-12 * (1.0 + cn2):
                # The row's normal has (almost) no component left in the
                # remaining null space: any reachable z moves it by less than
                # micro-scale, so re-imposing it would only feed rounding
                # noise to the active-set solver.  Neutralise.
                for c in range(nz):
                    Cq[rr, c] = 0.0
                lo[rr] = -1.0
                hi[rr] = 1.0
                continue
            l = flb_all[rr] - cx - v_all[rr] - eps_f
            h = fub_all[rr] - cx - v_all[rr] + eps_f
            # Drift accumulated in x at intermediate levels can push the
            # achieved row value slightly past its frozen bound.  z = 0 must
            # remain feasible (a level may always decline to move), so the
            # pinned window is widened to cover the value actually reached.
            if l > 0.0:
                l = 0.0
            if h < 0.0:
                h = 0.0
            lo[rr] = l
            hi[rr] = h
        for j in range(mi):
            rr = ci_off[p] + j
            cx = 0.0
            for t in range(N):
                cx += C_all[rr, t] * x[t]
            for c in range(nz):
                s = 0.0
                for t in range(N):
                    s += C_all[rr, t] * Z[t, c]
                Cq[nprior + j, c] = s
            Cq[nprior + j, nz + j] = 1.0
            lo[nprior + j] = flb_all[rr] - cx - eps_f
            hi[nprior + j] = fub_all[rr] - cx + eps_f
        zeta, status, it, act, na = qp_gi(H, gv, Cq, lo, hi, max_qp_iter)
        qp_iters[p] = it
        if status != QP_OK:
            # Perturbed restart.  Two repairs; both only touch this level and
            # the post-solve projection below re-tightens whatever they let
            # through.
            #
            # (1) Merge nearly (anti)parallel pinned rows.  Pins of the same
            # projected direction are semantically one interval, but as two
            # rows their ~1e-8 angular residual is below what the dual
            # equations resolve, and the walk dead-ends on the pair.  Both
            # windows contain 0 (clamped above), so the intersection is
            # never empty.
            rown = np.zeros(nprior)
            for a in range(nprior):
                s2 = 0.0
                for c in range(nz):
                    s2 += Cq[a, c] * Cq[a, c]
                rown[a] = np.sqrt(s2)
            for a in range(nprior):
                if rown[a] <= 0.0:
                    continue
                for b in range(a + 1, nprior):
                    if rown[b] <= 0.0:
                        continue
                    dot = 0.0
                    for c in range(nz):
                        dot += Cq[a, c] * Cq[b, c]
                    cosab = dot / (rown[a] * rown[b])
                    kap = rown[b] / rown[a]
                    if cosab > 1.0 - 1e-12:
                        lo2 = lo[b] / kap
                        hi2 = hi[b] / kap
                    elif cosab < -1.0 + 1e-12:
                        lo2 = -hi[b] / kap
                        hi2 = -lo[b] / kap
                    else:
                        continue
                    if lo2 > lo[a]:
                        lo[a] = lo2
                    if hi2 < hi[a]:
                        hi[a] = hi2
                    for c in range(nz):
                        Cq[b, c] = 0.0
                    lo[b] = -1.0
                    hi[b] = 1.0
                    rown[b] = 0.0
            # (2) Window slop at the arithmetic scale plus stiffer flat z
            # directions: degenerate corners stop being exactly degenerate.
            for j in range(ncon):
                rn2 = 0.0
                for c in range(nvar):
                    rn2 += Cq[j, c] * Cq[j, c]
                slop = 1e-9 * (1.0 + abs(lo[j]) + abs(hi[j])) + 1e-6 * np.sqrt(rn2)
                if not np.isinf(lo[j]):
                    lo[j] -= slop
                if not np.isinf(hi[j]):
                    hi[j] += slop
            for r in range(nz):
                H[r, r] += 9.0 * ez
            eps_used[p] = 10.0 * ez
            zeta, status, it2, act, na = qp_gi(H, gv, Cq, lo, hi, max_qp_iter)
            qp_iters[p] = it + it2
        if status != QP_OK:
            fails[p] = 1
            # least-squares fallback: z = 0, own slack projects rows feasible
            for j in range(mi):
                rr = ci_off[p] + j
                cx = 0.0
                for t in range(N):
                    cx += C_all[rr, t] * x[t]
                vj = 0.0
                if cx < flb_all[rr]:
                    vj = flb_all[rr] - cx
                elif cx > fub_all[rr]:
                    vj = fub_all[rr] - cx
                v_all[rr] = vj
        else:
            # Refinement: the diagonal inflation that keeps the dual QP well
            # conditioned also biases its minimizer, so re-minimize the true
            # objective on the converged face and walk the active set from
            # there -- pin the rows the exact minimizer pushes out of bounds,
            # release the rows whose multiplier has the wrong sign.  The
            # result is accepted only if it stays inside the widened bounds
            # and does not worsen the true objective; otherwise the raw QP
            # iterate is kept.
            do_ref = me > 0 or na > 0
            if me == 0 and do_ref:
                vmax = 0.0
                for j in range(mi):
                    av = abs(zeta[nz + j])
                    if av > vmax:
                        vmax = av
                if vmax <= eps_f:
                    do_ref = False
            if do_ref:
                nobj = me + mi
                Mo = np.zeros((nobj, nvar))
                tv = np.zeros(nobj)
                if me > 0 and nz > 0:
                    AZp = A_all[ae_off[p] : ae_off[p + 1]] @ Z
                    r0p = A_all[ae_off[p] : ae_off[p + 1]] @ x - b_all[ae_off[p] : ae_off[p + 1]]
                    for rr in range(me):
                        for c in range(nz):
                            Mo[rr, c] = AZp[rr, c]
                        tv[rr] = r0p[rr]
                for j in range(mi):
                    Mo[me + j, nz + j] = 1.0
                # row pin state: 0 free, 1 at lower bound, 2 at upper bound
                pin = np.zeros(ncon, dtype=np.int8)
                for i in range(na):
                    k = act[i]
                    pin[k >> 1] = 1 if (k & 1) == 0 else 2
                zeta_p = zeta.copy()
                PE = np.zeros((nvar, 0))
                accept = False
                for _ref in range(ncon + 16):
                    nws = 0
                    for j in range(ncon):
                        if pin[j] != 0:
                            nws += 1
                    if nws > 0:
                        E = np.zeros((nws, nvar))
                        dd = np.zeros(nws)
                        i = 0
                        for j in range(ncon):
                            if pin[j] == 0:
                                continue
                            for c in range(nvar):
                                E[i, c] = Cq[j, c]
                            # pin at the unwidened bound
                            dd[i] = lo[j] + eps_f if pin[j] == 1 else hi[j] - eps_f
                            i += 1
                        PE = np.linalg.pinv(E)
                        zeta_e = PE @ dd
                        Y = kernel_basis_k(E, 1e-12)
                    else:
                        zeta_e = np.zeros(nvar)
                        Y = np.eye(nvar)
                    if Y.shape[1] > 0 and nobj > 0:
                        MY = Mo @ Y
                        rhs = -(tv + Mo @ zeta_e)
                        yy = np.linalg.pinv(MY) @ rhs
                        zeta_p = zeta_e + Y @ yy
                    else:
                        zeta_p = zeta_e.copy()
                    # most violated row, scaled, against the widened bounds
                    jworst = -1
                    worst = 0.0
                    side = 0
                    for j in range(ncon):
                        val = 0.0
                        for c in range(nvar):
                            val += Cq[j, c] * zeta_p[c]
                        sc = 1e-12 * (1.0 + abs(val))
                        if val < lo[j] - sc:
                            viol = (lo[j] - val) / (1.0 + abs(lo[j]))
                            if viol > worst:
                                worst = viol
                                jworst = j
                                side = 1
                        elif val > hi[j] + sc:
                            viol = (val - hi[j]) / (1.0 + abs(hi[j]))
                            if viol > worst:
                                worst = viol
                                jworst = j
                                side = 2
                    if jworst >= 0:
                        if pin[jworst] != 0:
                            break  # numerically inconsistent face; keep raw
                        pin[jworst] = side
                        continue
                    if nws == 0:
                        accept = True
                        break
                    # multipliers of the pinned rows at the face minimum
                    grad = np.zeros(nvar)
                    for rr in range(nobj):
                        s = tv[rr]
                        for c in range(nvar):
                            s += Mo[rr, c] * zeta_p[c]
                        for c in range(nvar):
                            grad[c] += Mo[rr, c] * s
                    lam = np.zeros(nws)
                    gmax = 1.0
                    for i in range(nws):
                        s = 0.0
                        for c in range(nvar):
                            s += PE[c, i] * grad[c]
                        lam[i] = s
                        if abs(s) > gmax:
                            gmax = abs(s)
                    jdrop = -1
                    wdrop = 1e-10 * gmax
                    i = 0
                    for j in range(ncon):
                        if pin[j] == 0:
                            continue
                        # releasing a lower pin helps when lam < 0, an upper
                        # pin when lam > 0
                        bad = -lam[i] if pin[j] == 1 else lam[i]
                        if bad > wdrop:
                            wdrop = bad
                            jdrop = j
                        i += 1
                    if jdrop < 0:
                        accept = True
                        break
                    pin[jdrop] = 0
                if accept:
                    fq = 0.0
                    fp = 0.0
                    for rr in range(nobj):
                        sq = tv[rr]
                        sp = tv[rr]
                        for c in range(nvar):
                            sq += Mo[rr, c] * zeta[c]
                            sp += Mo[rr, c] * zeta_p[c]
                        fq += sq * sq
                        fp += sp * sp
                    if fp <= fq + 1e-9 * (1.0 + fq):
                        zeta = zeta_p
            if nz > 0:
                xd = Z @ zeta[:nz]
                for t in range(N):
                    x[t] += xd[t]
            for j in range(mi):
                v_all[ci_off[p] + j] = zeta[nz + j]
        # Project the recorded slacks so C x + v lies inside [f_lb, f_ub]
        # exactly: later levels re-impose these rows with v pinned, and any
        # rounding drift left here would surface there as fake infeasibility.
        for j in range(mi):
            rr = ci_off[p] + j
            cx = 0.0
            for t in range(N):
                cx += C_all[rr, t] * x[t]
            vj = v_all[rr]
            lo_t = flb_all[rr] - cx
            hi_t = fub_all[rr] - cx
            if vj < lo_t:
                vj = lo_t
            elif vj > hi_t:
                vj = hi_t
            v_all[rr] = vj
        # equality slack and residual norm
        rn = 0.0
        if me > 0:
            for rr in range(me):
                s = b_all[ae_off[p] + rr]
                for t in range(N):
                    s -= A_all[ae_off[p] + rr, t] * x[t]
                w_all[ae_off[p] + rr] = s
                rn += s * s
        for j in range(mi):
            vv = v_all[ci_off[p] + j]
            rn += vv * vv
        resid[p] = np.sqrt(rn)
        # recurse the null space
        if me > 0 and nz > 0 and p < nlev - 1:
            AZ = A_all[ae_off[p] : ae_off[p + 1]] @ Z
            K = kernel_basis_k(AZ, rank_tol)
            ranks[p] = nz - K.shape[1]
            Z = Z @ K  # replaces basis
            nz = K.shape[1]
        nulldims[p] = nz
    return x, w_all, v_all, resid, ranks, nulldims, fails, eps_used, qp_iters
