"""Quaternion and orientation helpers.

Quaternions are stored as (w, x, y, z) with unit norm. Angular velocity is
expressed in the body frame throughout the simulator.
"""

from __future__ import annotations

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.sqrt(float(np.dot(q, q)))
    if n <= 0.0 or not np.isfinite(n):
        raise ValueError(f"cannot normalize quaternion with norm {n}")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix mapping body-frame vectors into the world frame."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_integrate(q: np.ndarray, omega_body: np.ndarray, dt: float) -> np.ndarray:
    """Advance orientation by a body-frame angular velocity over dt.

    Uses the exact exponential map of the rotation increment, then
    renormalizes, so norm drift stays at round-off level.
    """
    wn = float(np.sqrt(omega_body @ omega_body))
    angle = wn * dt
    if angle < 1e-12:
        dq = np.array([1.0, *(0.5 * dt * omega_body)])
    else:
        half = 0.5 * angle
        dq = np.empty(4)
        dq[0] = np.cos(half)
        dq[1:] = (np.sin(half) / wn) * omega_body
    return quat_normalize(quat_multiply(q, dq))


def roll_pitch_yaw(q: np.ndarray) -> tuple[float, float, float]:
    """ZYX Euler angles (roll about x, pitch about y, yaw about z)."""
    w, x, y, z = q
    roll = np.arctan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = np.arcsin(np.clip(2 * (w * y - z * x), -1.0, 1.0))
    yaw = np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return float(roll), float(pitch), float(yaw)
