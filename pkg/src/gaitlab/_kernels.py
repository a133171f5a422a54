"""Numba-compiled physics inner loop.

One kernel advances n_sub substeps of the torso + massless-leg model,
recomputing per-joint torque each substep: every joint applies the
feedforward ``tau_ff``; joints with ``pd_mask`` set add PD tracking of
``q_target`` on top. Returns the new state arrays plus power and contact
diagnostics. The math mirrors ``dynamics.QuadrupedSim`` documentation; this
file is the single source of truth for the stepping arithmetic.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, fastmath=False)
def _quat_to_mat(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0] = 1 - 2 * (y * y + z * z)
    R[0, 1] = 2 * (x * y - w * z)
    R[0, 2] = 2 * (x * z + w * y)
    R[1, 0] = 2 * (x * y + w * z)
    R[1, 1] = 1 - 2 * (x * x + z * z)
    R[1, 2] = 2 * (y * z - w * x)
    R[2, 0] = 2 * (x * z - w * y)
    R[2, 1] = 2 * (y * z + w * x)
    R[2, 2] = 1 - 2 * (x * x + y * y)
    return R


@njit(cache=True, fastmath=False)
def _terrain_height(hm, ox, oy, cell, flat, x, y):
    if flat:
        return 0.0
    ny, nx = hm.shape
    gx = (x - ox) / cell
    gy = (y - oy) / cell
    if gx < 0.0:
        gx = 0.0
    if gx > nx - 1.0:
        gx = nx - 1.0
    if gy < 0.0:
        gy = 0.0
    if gy > ny - 1.0:
        gy = ny - 1.0
    ix = int(gx)
    iy = int(gy)
    if ix > nx - 2:
        ix = nx - 2
    if iy > ny - 2:
        iy = ny - 2
    fx = gx - ix
    fy = gy - iy
    top = hm[iy, ix] + (hm[iy, ix + 1] - hm[iy, ix]) * fx
    bot = hm[iy + 1, ix] + (hm[iy + 1, ix + 1] - hm[iy + 1, ix]) * fx
    return top + (bot - top) * fy


@njit(cache=True, fastmath=False)
def _solve3(M, b):
    """Solve a well-conditioned SPD 3x3 system by Cramer's rule."""
    a, d, g = M[0, 0], M[0, 1], M[0, 2]
    e, h = M[1, 1], M[1, 2]
    i = M[2, 2]
    b_, f_ = M[1, 0], M[2, 0]
    c_ = M[2, 1]
    det = (a * (e * i - h * c_) - d * (b_ * i - h * f_)
           + g * (b_ * c_ - e * f_))
    x = np.empty(3)
    x[0] = (b[0] * (e * i - h * c_) - d * (b[1] * i - h * b[2])
            + g * (b[1] * c_ - e * b[2])) / det
    x[1] = (a * (b[1] * i - h * b[2]) - b[0] * (b_ * i - h * f_)
            + g * (b_ * b[2] - b[1] * f_)) / det
    x[2] = (a * (e * b[2] - b[1] * c_) - d * (b_ * b[2] - b[1] * f_)
            + b[0] * (b_ * c_ - e * f_)) / det
    return x


@njit(cache=True, fastmath=False)
def control_step(pos, quat, v_body, w_body, q, qd, energy0,
                 pd_mask, q_target, kp, kd, strength, tau_ff,
                 hm, ox, oy, cell, flat,
                 hips, l1, l2, limits,
                 inertia, inertia_inv, torso_mass, tau_max, jri, jfric,
                 kn, cn, ct, friction, payload, com_off, payload_mount_z,
                 gravity, dt, n_sub, positive_power, contacts_enabled):
    pos = pos.copy()
    quat = quat.copy()
    v_body = v_body.copy()
    w_body = w_body.copy()
    q = q.copy()
    qd = qd.copy()
    energy = energy0

    tau = np.zeros(12)
    contacts = np.zeros(4, dtype=np.bool_)
    power_raw_sum = 0.0
    power_pos_sum = 0.0
    total_mass = torso_mass + payload
    com_b = np.empty(3)
    com_b[0] = com_off[0]
    com_b[1] = com_off[1]
    com_b[2] = com_off[2] + (payload / total_mass) * payload_mount_z
    ok = True

    feet_w = np.empty((4, 3))
    J = np.empty((4, 3, 3))
    forces = np.empty((4, 3))

    for sub in range(n_sub):
        # per-joint torque
        for i in range(12):
            t = tau_ff[i]
            if pd_mask[i]:
                raw = kp * (q_target[i] - q[i]) - kd * qd[i]
                if raw > tau_max:
                    raw = tau_max
                elif raw < -tau_max:
                    raw = -tau_max
                t += strength[i] * raw
            # applied torque always respects the motor limit
            if t > tau_max:
                t = tau_max
            elif t < -tau_max:
                t = -tau_max
            tau[i] = t

        R = _quat_to_mat(quat)

        # forward kinematics and jacobians, body frame -> world feet
        for leg in range(4):
            qa = q[3 * leg]
            qh = q[3 * leg + 1]
            qk = q[3 * leg + 2]
            sh = np.sin(qh)
            ch = np.cos(qh)
            shk = np.sin(qh + qk)
            chk = np.cos(qh + qk)
            ca = np.cos(qa)
            sa = np.sin(qa)
            xl = -l1[leg] * sh - l2[leg] * shk
            zl = -l1[leg] * ch - l2[leg] * chk
            px = hips[leg, 0] + xl
            py = hips[leg, 1] - sa * zl
            pz = hips[leg, 2] + ca * zl
            feet_w[leg, 0] = pos[0] + R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz
            feet_w[leg, 1] = pos[1] + R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz
            feet_w[leg, 2] = pos[2] + R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz
            J[leg, 0, 0] = 0.0
            J[leg, 1, 0] = -ca * zl
            J[leg, 2, 0] = -sa * zl
            J[leg, 0, 1] = zl
            J[leg, 1, 1] = sa * xl
            J[leg, 2, 1] = -ca * xl
            J[leg, 0, 2] = -l2[leg] * chk
            J[leg, 1, 2] = -sa * l2[leg] * shk
            J[leg, 2, 2] = ca * l2[leg] * shk

        # contact forces (world frame)
        vwx = R[0, 0] * v_body[0] + R[0, 1] * v_body[1] + R[0, 2] * v_body[2]
        vwy = R[1, 0] * v_body[0] + R[1, 1] * v_body[1] + R[1, 2] * v_body[2]
        vwz = R[2, 0] * v_body[0] + R[2, 1] * v_body[1] + R[2, 2] * v_body[2]
        wwx = R[0, 0] * w_body[0] + R[0, 1] * w_body[1] + R[0, 2] * w_body[2]
        wwy = R[1, 0] * w_body[0] + R[1, 1] * w_body[1] + R[1, 2] * w_body[2]
        wwz = R[2, 0] * w_body[0] + R[2, 1] * w_body[1] + R[2, 2] * w_body[2]

        # contact forces and joint velocities, leg by leg. Contact damping is
        # integrated implicitly against the reflected joint inertia (3x3
        # solve per leg), which keeps stiff, stiction-like tangential damping
        # stable at this time step.
        qd_new = np.empty(12)
        for leg in range(4):
            forces[leg, 0] = 0.0
            forces[leg, 1] = 0.0
            forces[leg, 2] = 0.0
            i0 = 3 * leg

            pen = -1.0
            if contacts_enabled:
                pen = _terrain_height(hm, ox, oy, cell, flat,
                                      feet_w[leg, 0], feet_w[leg, 1]) \
                    - feet_w[leg, 2]
            if pen <= 0.0:
                denom = 1.0 + dt * jfric / jri
                for j in range(3):
                    qd_new[i0 + j] = (qd[i0 + j] + dt * tau[i0 + j] / jri) / denom
                continue

            # base-driven part of the foot velocity (world frame)
            rx = feet_w[leg, 0] - pos[0]
            ry = feet_w[leg, 1] - pos[1]
            rz = feet_w[leg, 2] - pos[2]
            ux = vwx + wwy * rz - wwz * ry
            uy = vwy + wwz * rx - wwx * rz
            uz = vwz + wwx * ry - wwy * rx
            # world-frame leg jacobian B = R @ J[leg]
            B = np.empty((3, 3))
            for a in range(3):
                for b in range(3):
                    B[a, b] = (R[a, 0] * J[leg, 0, b] + R[a, 1] * J[leg, 1, b]
                               + R[a, 2] * J[leg, 2, b])
            fn_spring = kn * pen
            # M = jri*I + dt*jfric*I + dt * B^T C B,  C = diag(ct, ct, cn)
            M = np.empty((3, 3))
            for a in range(3):
                for b in range(3):
                    M[a, b] = dt * (ct * (B[0, a] * B[0, b] + B[1, a] * B[1, b])
                                    + cn * B[2, a] * B[2, b])
                M[a, a] += jri + dt * jfric
            rhs = np.empty(3)
            for a in range(3):
                rhs[a] = (jri * qd[i0 + a] + dt * tau[i0 + a]
                          + dt * (B[2, a] * fn_spring
                                  - B[0, a] * ct * ux - B[1, a] * ct * uy
                                  - B[2, a] * cn * uz))
            qdl = _solve3(M, rhs)
            vfx = ux + B[0, 0] * qdl[0] + B[0, 1] * qdl[1] + B[0, 2] * qdl[2]
            vfy = uy + B[1, 0] * qdl[0] + B[1, 1] * qdl[1] + B[1, 2] * qdl[2]
            vfz = uz + B[2, 0] * qdl[0] + B[2, 1] * qdl[1] + B[2, 2] * qdl[2]
            fn = fn_spring - cn * vfz
            clamped_force = False
            if fn < 0.0:
                fn = 0.0
                clamped_force = True
            ftx = -ct * vfx
            fty = -ct * vfy
            tnorm = np.sqrt(ftx * ftx + fty * fty)
            cap = friction * fn
            if tnorm > cap:
                clamped_force = True
                s = cap / tnorm if tnorm > 0.0 else 0.0
                ftx *= s
                fty *= s
            forces[leg, 0] = ftx
            forces[leg, 1] = fty
            forces[leg, 2] = fn
            if clamped_force:
                # redo the joint update explicitly with the clamped force;
                # identical to the implicit solution when no clamp binds
                denom = 1.0 + dt * jfric / jri
                for a in range(3):
                    tc = B[0, a] * ftx + B[1, a] * fty + B[2, a] * fn
                    qd_new[i0 + a] = (qd[i0 + a]
                                      + dt * (tau[i0 + a] + tc) / jri) / denom
            else:
                for a in range(3):
                    qd_new[i0 + a] = qdl[a]

        # torso wrench about the combined CoM
        comx = pos[0] + R[0, 0] * com_b[0] + R[0, 1] * com_b[1] + R[0, 2] * com_b[2]
        comy = pos[1] + R[1, 0] * com_b[0] + R[1, 1] * com_b[1] + R[1, 2] * com_b[2]
        comz = pos[2] + R[2, 0] * com_b[0] + R[2, 1] * com_b[1] + R[2, 2] * com_b[2]
        fx = 0.0
        fy = 0.0
        fz = -total_mass * gravity
        mx = 0.0
        my = 0.0
        mz = 0.0
        for leg in range(4):
            fx += forces[leg, 0]
            fy += forces[leg, 1]
            fz += forces[leg, 2]
            ax = feet_w[leg, 0] - comx
            ay = feet_w[leg, 1] - comy
            az = feet_w[leg, 2] - comz
            mx += ay * forces[leg, 2] - az * forces[leg, 1]
            my += az * forces[leg, 0] - ax * forces[leg, 2]
            mz += ax * forces[leg, 1] - ay * forces[leg, 0]

        # linear: semi-implicit velocity, midpoint position
        nvx = vwx + dt * fx / total_mass
        nvy = vwy + dt * fy / total_mass
        nvz = vwz + dt * fz / total_mass
        pos[0] += dt * 0.5 * (vwx + nvx)
        pos[1] += dt * 0.5 * (vwy + nvy)
        pos[2] += dt * 0.5 * (vwz + nvz)

        # angular: body frame with gyroscopic term
        mbx = R[0, 0] * mx + R[1, 0] * my + R[2, 0] * mz
        mby = R[0, 1] * mx + R[1, 1] * my + R[2, 1] * mz
        mbz = R[0, 2] * mx + R[1, 2] * my + R[2, 2] * mz
        iwx = inertia[0, 0] * w_body[0] + inertia[0, 1] * w_body[1] + inertia[0, 2] * w_body[2]
        iwy = inertia[1, 0] * w_body[0] + inertia[1, 1] * w_body[1] + inertia[1, 2] * w_body[2]
        iwz = inertia[2, 0] * w_body[0] + inertia[2, 1] * w_body[1] + inertia[2, 2] * w_body[2]
        gx = w_body[1] * iwz - w_body[2] * iwy
        gy = w_body[2] * iwx - w_body[0] * iwz
        gz = w_body[0] * iwy - w_body[1] * iwx
        tbx = mbx - gx
        tby = mby - gy
        tbz = mbz - gz
        w_body[0] += dt * (inertia_inv[0, 0] * tbx + inertia_inv[0, 1] * tby + inertia_inv[0, 2] * tbz)
        w_body[1] += dt * (inertia_inv[1, 0] * tbx + inertia_inv[1, 1] * tby + inertia_inv[1, 2] * tbz)
        w_body[2] += dt * (inertia_inv[2, 0] * tbx + inertia_inv[2, 1] * tby + inertia_inv[2, 2] * tbz)

        # quaternion exponential-map increment, renormalized
        wn = np.sqrt(w_body[0] ** 2 + w_body[1] ** 2 + w_body[2] ** 2)
        angle = wn * dt
        if angle < 1e-12:
            dw, dx, dy, dz = 1.0, 0.5 * dt * w_body[0], 0.5 * dt * w_body[1], 0.5 * dt * w_body[2]
        else:
            half = 0.5 * angle
            f = np.sin(half) / wn
            dw, dx, dy, dz = np.cos(half), f * w_body[0], f * w_body[1], f * w_body[2]
        qw = quat[0] * dw - quat[1] * dx - quat[2] * dy - quat[3] * dz
        qx = quat[0] * dx + quat[1] * dw + quat[2] * dz - quat[3] * dy
        qy = quat[0] * dy - quat[1] * dz + quat[2] * dw + quat[3] * dx
        qz = quat[0] * dz + quat[1] * dy - quat[2] * dx + quat[3] * dw
        qn = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        if not (qn > 0.0 and np.isfinite(qn)):
            ok = False
            break
        quat[0] = qw / qn
        quat[1] = qx / qn
        quat[2] = qy / qn
        quat[3] = qz / qn
        R2 = _quat_to_mat(quat)
        v_body[0] = R2[0, 0] * nvx + R2[1, 0] * nvy + R2[2, 0] * nvz
        v_body[1] = R2[0, 1] * nvx + R2[1, 1] * nvy + R2[2, 1] * nvz
        v_body[2] = R2[0, 2] * nvx + R2[1, 2] * nvy + R2[2, 2] * nvz

        # joint positions: midpoint update on the implicit velocities. The
        # power meter uses the same midpoint velocity, so the metered energy
        # is exactly the work tau * dq done by each motor.
        p_raw = 0.0
        p_pos = 0.0
        for k in range(12):
            p = tau[k] * 0.5 * (qd[k] + qd_new[k])
            p_raw += p
            if p > 0.0:
                p_pos += p
            qn_ = q[k] + dt * 0.5 * (qd[k] + qd_new[k])
            qdk = qd_new[k]
            if qn_ < limits[k, 0]:
                qn_ = limits[k, 0]
                qdk = 0.0
            elif qn_ > limits[k, 1]:
                qn_ = limits[k, 1]
                qdk = 0.0
            q[k] = qn_
            qd[k] = qdk
        power_raw_sum += p_raw
        power_pos_sum += p_pos
        energy += (p_pos if positive_power else p_raw) * dt

        if not (np.isfinite(pos[0] + pos[1] + pos[2] + v_body[0] + v_body[1]
                            + v_body[2] + w_body[0] + w_body[1] + w_body[2])):
            ok = False
            break

    # contact flags for the final state
    if ok and contacts_enabled:
        R = _quat_to_mat(quat)
        for leg in range(4):
            qa = q[3 * leg]
            qh = q[3 * leg + 1]
            qk = q[3 * leg + 2]
            zl = -l1[leg] * np.cos(qh) - l2[leg] * np.cos(qh + qk)
            xl = -l1[leg] * np.sin(qh) - l2[leg] * np.sin(qh + qk)
            px = hips[leg, 0] + xl
            py = hips[leg, 1] - np.sin(qa) * zl
            pz = hips[leg, 2] + np.cos(qa) * zl
            wx = pos[0] + R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz
            wy = pos[1] + R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz
            wz = pos[2] + R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz
            contacts[leg] = _terrain_height(hm, ox, oy, cell, flat, wx, wy) > wz

    return (pos, quat, v_body, w_body, q, qd, tau.copy(), contacts, energy,
            power_raw_sum / n_sub, power_pos_sum / n_sub, ok)
