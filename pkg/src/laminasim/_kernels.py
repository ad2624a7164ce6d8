"""Compiled numeric core shared by kinematics, constraints and dynamics.

Bodies are stored in topological order (parent index < child index, root at 0).
Body-local coordinates are the flat fabricated-state coordinates, so every body
placement is the identity at q = 0.
"""

from typing import NamedTuple

import numpy as np
from numba import njit

BLOWUP_BOUND = 1e6
# Relative singular-value cutoff for the redundant 9-row loop system. Off the constraint
# manifold the stacked point rows pick up a spurious direction whose singular value
# scales with the closure error squared; keeping it drives violent corrections.
PINV_RCOND = 1e-4


class Model(NamedTuple):
    parent: np.ndarray  # (nb,) int64, -1 for the root
    coord: np.ndarray  # (nb,) int64, coordinate driving the edge into the body
    sign: np.ndarray  # (nb,) +1 if the tree edge follows the joint's parent->child sense
    axis_u: np.ndarray  # (nb, 3) unit hinge direction, flat frame
    axis_p: np.ndarray  # (nb, 3) point on the hinge line, flat frame
    mass: np.ndarray  # (nb,)
    com: np.ndarray  # (nb, 3) flat frame
    inertia: np.ndarray  # (nb, 3, 3) about COM, flat frame axes
    stiffness: np.ndarray  # (n,)
    damping: np.ndarray  # (n,)
    rest: np.ndarray  # (n,)
    gravity: np.ndarray  # (3,)
    loop_orig: int  # -1 when there is no loop
    loop_dummy: int
    loop_points: np.ndarray  # (3, 3) flat frame
    sched_t: np.ndarray  # (n, K) breakpoint times, +inf padded
    sched_v: np.ndarray  # (n, K) torque after each breakpoint
    hold: np.ndarray  # (n,) burn-in hold torque


@njit(cache=True)
def cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def mv3(A, x):
    out = np.empty(3)
    for i in range(3):
        out[i] = A[i, 0] * x[0] + A[i, 1] * x[1] + A[i, 2] * x[2]
    return out


@njit(cache=True)
def mm3(A, B):
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]
    return out


@njit(cache=True)
def rotation(u, angle):
    c = np.cos(angle)
    s = np.sin(angle)
    v = 1.0 - c
    x, y, z = u[0], u[1], u[2]
    R = np.empty((3, 3))
    R[0, 0] = c + x * x * v
    R[0, 1] = x * y * v - z * s
    R[0, 2] = x * z * v + y * s
    R[1, 0] = y * x * v + z * s
    R[1, 1] = c + y * y * v
    R[1, 2] = y * z * v - x * s
    R[2, 0] = z * x * v - y * s
    R[2, 1] = z * y * v + x * s
    R[2, 2] = c + z * z * v
    return R


@njit(cache=True)
def kinematics(q, qd, parent, coord, sign, axis_u, axis_p):
    """Placements, world hinge axes/points, angular velocities and q̈-free accelerations.

    ``acc[b]`` is the bias acceleration (q̈ = 0) of the hinge point ``aw[b]``, which
    serves as body b's reference point; ``alpha[b]`` is its bias angular acceleration.
    """
    nb = parent.shape[0]
    R = np.zeros((nb, 3, 3))
    o = np.zeros((nb, 3))
    uw = np.zeros((nb, 3))
    aw = np.zeros((nb, 3))
    w = np.zeros((nb, 3))
    alpha = np.zeros((nb, 3))
    acc = np.zeros((nb, 3))
    for b in range(nb):
        p = parent[b]
        if p < 0:
            for i in range(3):
                R[b, i, i] = 1.0
            continue
        j = coord[b]
        s = sign[b]
        Rrel = rotation(axis_u[b], s * q[j])
        R[b] = mm3(R[p], Rrel)
        uw[b] = mv3(R[p], axis_u[b])
        aw[b] = mv3(R[p], axis_p[b]) + o[p]
        o[b] = aw[b] - mv3(R[b], axis_p[b])
        rate = s * qd[j]
        w[b] = w[p] + rate * uw[b]
        alpha[b] = alpha[p] + rate * cross(w[p], uw[b])
        d = aw[b] - aw[p]
        acc[b] = acc[p] + cross(alpha[p], d) + cross(w[p], cross(w[p], d))
    return R, o, uw, aw, w, alpha, acc


@njit(cache=True)
def add_point_jacobian(out, scale, b, x, parent, coord, sign, uw, aw):
    """out[:, j] += scale * ∂v(x)/∂q̇_j for world point x fixed on body b."""
    c = b
    while parent[c] >= 0:
        j = coord[c]
        k = sign[c] * scale
        dx = x[0] - aw[c, 0]
        dy = x[1] - aw[c, 1]
        dz = x[2] - aw[c, 2]
        out[0, j] += k * (uw[c, 1] * dz - uw[c, 2] * dy)
        out[1, j] += k * (uw[c, 2] * dx - uw[c, 0] * dz)
        out[2, j] += k * (uw[c, 0] * dy - uw[c, 1] * dx)
        c = parent[c]


@njit(cache=True)
def add_angular_jacobian(out, b, parent, coord, sign, uw):
    c = b
    while parent[c] >= 0:
        j = coord[c]
        for i in range(3):
            out[i, j] += sign[c] * uw[c, i]
        c = parent[c]


@njit(cache=True)
def bias_point_acceleration(b, x, w, alpha, acc, aw):
    d = x - aw[b]
    return acc[b] + cross(alpha[b], d) + cross(w[b], cross(w[b], d))


@njit(cache=True)
def point_velocity(q, qd, b, x_local, parent, coord, sign, axis_u, axis_p):
    R, o, uw, aw, w, alpha, acc = kinematics(q, qd, parent, coord, sign, axis_u, axis_p)
    x = mv3(R[b], x_local) + o[b]
    J = np.zeros((3, q.shape[0]))
    add_point_jacobian(J, 1.0, b, x, parent, coord, sign, uw, aw)
    return J @ qd


@njit(cache=True)
def mass_and_forces(q, qd, tau_ext, parent, coord, sign, axis_u, axis_p, mass, com, inertia,
                    stiffness, damping, rest, gravity):
    """Kane assembly: M(q), active generalized forces and velocity-product (inertial bias) forces."""
    n = q.shape[0]
    nb = parent.shape[0]
    R, o, uw, aw, w, alpha, acc = kinematics(q, qd, parent, coord, sign, axis_u, axis_p)
    M = np.zeros((n, n))
    f_active = np.zeros(n)
    f_inertial = np.zeros(n)
    Jv = np.empty((3, n))
    Jw = np.empty((3, n))
    IJ = np.empty((3, n))
    for b in range(1, nb):
        m = mass[b]
        xc = mv3(R[b], com[b]) + o[b]
        Jv[:] = 0.0
        Jw[:] = 0.0
        add_point_jacobian(Jv, 1.0, b, xc, parent, coord, sign, uw, aw)
        add_angular_jacobian(Jw, b, parent, coord, sign, uw)
        Iw = mm3(mm3(R[b], inertia[b]), R[b].T)
        for i in range(3):
            for j in range(n):
                IJ[i, j] = Iw[i, 0] * Jw[0, j] + Iw[i, 1] * Jw[1, j] + Iw[i, 2] * Jw[2, j]
        a_bias = bias_point_acceleration(b, xc, w, alpha, acc, aw)
        h = mv3(Iw, alpha[b]) + cross(w[b], mv3(Iw, w[b]))
        for i in range(n):
            f_active[i] += m * (Jv[0, i] * gravity[0] + Jv[1, i] * gravity[1] + Jv[2, i] * gravity[2])
            f_inertial[i] -= (
                m * (Jv[0, i] * a_bias[0] + Jv[1, i] * a_bias[1] + Jv[2, i] * a_bias[2])
                + Jw[0, i] * h[0] + Jw[1, i] * h[1] + Jw[2, i] * h[2]
            )
            for j in range(i, n):
                v = m * (Jv[0, i] * Jv[0, j] + Jv[1, i] * Jv[1, j] + Jv[2, i] * Jv[2, j])
                v += Jw[0, i] * IJ[0, j] + Jw[1, i] * IJ[1, j] + Jw[2, i] * IJ[2, j]
                M[i, j] += v
                if j != i:
                    M[j, i] += v
    for j in range(n):
        f_active[j] += -stiffness[j] * (q[j] - rest[j]) - damping[j] * qd[j] + tau_ext[j]
    return M, f_active, f_inertial


@njit(cache=True)
def loop_terms(q, qd, parent, coord, sign, axis_u, axis_p, loop_orig, loop_dummy, loop_points):
    """Coincidence residual C (9,), Jacobian A (9, n) and bias C̈|q̈=0 (9,)."""
    n = q.shape[0]
    R, o, uw, aw, w, alpha, acc = kinematics(q, qd, parent, coord, sign, axis_u, axis_p)
    C = np.zeros(9)
    A = np.zeros((9, n))
    cb = np.zeros(9)
    for k in range(3):
        p = loop_points[k]
        xo = mv3(R[loop_orig], p) + o[loop_orig]
        xd = mv3(R[loop_dummy], p) + o[loop_dummy]
        Jk = np.zeros((3, n))
        add_point_jacobian(Jk, 1.0, loop_orig, xo, parent, coord, sign, uw, aw)
        add_point_jacobian(Jk, -1.0, loop_dummy, xd, parent, coord, sign, uw, aw)
        ao = bias_point_acceleration(loop_orig, xo, w, alpha, acc, aw)
        ad = bias_point_acceleration(loop_dummy, xd, w, alpha, acc, aw)
        for i in range(3):
            C[3 * k + i] = xo[i] - xd[i]
            cb[3 * k + i] = ao[i] - ad[i]
            A[3 * k + i] = Jk[i]
    return C, A, cb


@njit(cache=True)
def coincidence_error(C):
    """Largest point-to-point distance among the stacked coincidence residuals."""
    worst = 0.0
    for k in range(C.shape[0] // 3):
        d = np.sqrt(C[3 * k] ** 2 + C[3 * k + 1] ** 2 + C[3 * k + 2] ** 2)
        if d > worst:
            worst = d
    return worst


@njit(cache=True)
def solve_constrained(M, f, A, b):
    """q̈ from [M Aᵀ; A 0][q̈; λ] = [f; b] via the Schur complement with a pseudo-inverse.

    S = A M⁻¹ Aᵀ is symmetric positive semi-definite, so its pseudo-inverse is taken
    from the eigendecomposition, dropping eigenvalues below PINV_RCOND · max.
    """
    Minv_f = np.linalg.solve(M, f)
    if A.shape[0] == 0:
        return Minv_f
    Minv_At = np.linalg.solve(M, np.ascontiguousarray(A.T))
    S = A @ Minv_At
    S = 0.5 * (S + S.T)
    evals, V = np.linalg.eigh(S)
    r = V.T @ (A @ Minv_f - b)
    cutoff = PINV_RCOND * max(evals[-1], 0.0)
    for i in range(evals.shape[0]):
        r[i] = r[i] / evals[i] if evals[i] > cutoff else 0.0
    return Minv_f - Minv_At @ (V @ r)


@njit(cache=True)
def external_torque(t, sched_t, sched_v, hold, use_hold):
    n = hold.shape[0]
    out = np.zeros(n)
    if use_hold:
        return hold.copy()
    for j in range(n):
        for k in range(sched_t.shape[1]):
            if sched_t[j, k] <= t:
                out[j] = sched_v[j, k]
            else:
                break
    return out


@njit(cache=True)
def accelerations(t, q, qd, model, alpha, beta, baumgarte, constrained, use_hold):
    tau = external_torque(t, model.sched_t, model.sched_v, model.hold, use_hold)
    M, fa, fi = mass_and_forces(q, qd, tau, model.parent, model.coord, model.sign, model.axis_u,
                                model.axis_p, model.mass, model.com, model.inertia,
                                model.stiffness, model.damping, model.rest, model.gravity)
    f = fa + fi
    if constrained and model.loop_orig >= 0:
        C, A, cb = loop_terms(q, qd, model.parent, model.coord, model.sign, model.axis_u,
                              model.axis_p, model.loop_orig, model.loop_dummy, model.loop_points)
        b = -cb
        if baumgarte:
            b = b - 2.0 * alpha * (A @ qd) - beta * beta * C
        return solve_constrained(M, f, A, b)
    return np.linalg.solve(M, f)


@njit(cache=True)
def rk4_step(t, q, qd, dt, model, alpha, beta, baumgarte, constrained, use_hold):
    a1 = accelerations(t, q, qd, model, alpha, beta, baumgarte, constrained, use_hold)
    h = 0.5 * dt
    q2 = q + h * qd
    v2 = qd + h * a1
    a2 = accelerations(t + h, q2, v2, model, alpha, beta, baumgarte, constrained, use_hold)
    q3 = q + h * v2
    v3 = qd + h * a2
    a3 = accelerations(t + h, q3, v3, model, alpha, beta, baumgarte, constrained, use_hold)
    q4 = q + dt * v3
    v4 = qd + dt * a3
    a4 = accelerations(t + dt, q4, v4, model, alpha, beta, baumgarte, constrained, use_hold)
    q_new = q + dt / 6.0 * (qd + 2.0 * v2 + 2.0 * v3 + v4)
    qd_new = qd + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return q_new, qd_new


@njit(cache=True)
def energies(q, qd, model):
    n = q.shape[0]
    M, fa, fi = mass_and_forces(q, qd, np.zeros(n), model.parent, model.coord, model.sign,
                                model.axis_u, model.axis_p, model.mass, model.com, model.inertia,
                                model.stiffness, model.damping, model.rest, model.gravity)
    ke = 0.5 * qd @ (M @ qd)
    R, o, uw, aw, w, alpha, acc = kinematics(q, qd, model.parent, model.coord, model.sign,
                                             model.axis_u, model.axis_p)
    pe = 0.0
    for b in range(1, model.parent.shape[0]):
        xc = mv3(R[b], model.com[b]) + o[b]
        pe -= model.mass[b] * (model.gravity @ xc)
    for j in range(n):
        pe += 0.5 * model.stiffness[j] * (q[j] - model.rest[j]) ** 2
    return ke, pe


@njit(cache=True)
def sample_error(q, model):
    if model.loop_orig < 0:
        return 0.0
    C, A, cb = loop_terms(q, np.zeros_like(q), model.parent, model.coord, model.sign,
                          model.axis_u, model.axis_p, model.loop_orig, model.loop_dummy,
                          model.loop_points)
    return coincidence_error(C)


@njit(cache=True)
def _finite_and_bounded(x):
    for v in x:
        if not np.isfinite(v) or abs(v) > BLOWUP_BOUND:
            return False
    return True


@njit(cache=True)
def integrate(q0, qd0, t0, dt, nsteps, model, alpha, beta, baumgarte, constrained, use_hold):
    """Fixed-step RK4 run recording every step.

    Returns (t, Q, QD, err, ke, pe, n_recorded, failed); on blow-up the arrays are
    valid up to ``n_recorded`` and ``failed`` is True.
    """
    n = q0.shape[0]
    T = np.empty(nsteps + 1)
    Q = np.empty((nsteps + 1, n))
    QD = np.empty((nsteps + 1, n))
    err = np.empty(nsteps + 1)
    ke = np.empty(nsteps + 1)
    pe = np.empty(nsteps + 1)
    q = q0.copy()
    qd = qd0.copy()
    T[0] = t0
    Q[0] = q
    QD[0] = qd
    err[0] = sample_error(q, model)
    ke[0], pe[0] = energies(q, qd, model)
    for i in range(nsteps):
        t = t0 + i * dt
        q, qd = rk4_step(t, q, qd, dt, model, alpha, beta, baumgarte, constrained, use_hold)
        if not (_finite_and_bounded(q) and _finite_and_bounded(qd)):
            return T, Q, QD, err, ke, pe, i + 1, True
        T[i + 1] = t0 + (i + 1) * dt
        Q[i + 1] = q
        QD[i + 1] = qd
        err[i + 1] = sample_error(q, model)
        ke[i + 1], pe[i + 1] = energies(q, qd, model)
    return T, Q, QD, err, ke, pe, nsteps + 1, False
