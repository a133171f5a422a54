"""Simplified rigid-body quadruped simulator.

The torso is a single 6-DoF rigid body. Legs are massless kinematic chains:
ground-reaction forces act on the torso at the foot points, and each joint
integrates PD/contact torque against a lumped reflected inertia. This keeps
the tau^T qdot energy metric and the contact sequencing honest without an
articulated-body solver.

Ground contact is a spring-damper penalty on foot penetration with a
Coulomb-capped viscous tangential force. Integration is semi-implicit Euler
at dt = 0.0025 s (velocities first), with midpoint position updates so free
flight conserves energy exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .robot import N_JOINTS, N_LEGS, RobotModel
from .rotation import IDENTITY_QUAT, quat_to_matrix, roll_pitch_yaw
from .terrain import TerrainField

SIM_DT = 0.0025  # s, simulation time step
GRAVITY = 9.81  # m/s^2

_NO_PD = np.zeros(N_JOINTS, dtype=bool)
_ALL_PD = np.ones(N_JOINTS, dtype=bool)
_ZERO12 = np.zeros(N_JOINTS)
_ONES12 = np.ones(N_JOINTS)


class SimulationDiverged(RuntimeError):
    """Raised when integration produces non-finite state.

    Carries the last valid state in ``last_state``.
    """

    def __init__(self, message: str, last_state: "SimState"):
        super().__init__(message)
        self.last_state = last_state


@dataclass
class PdGains:
    kp: float = 55.0  # N m / rad
    kd: float = 0.8  # N m s / rad

    def __post_init__(self):
        if self.kp <= 0:
            raise ValueError("kp must be > 0")
        if self.kd < 0:
            raise ValueError("kd must be >= 0")


@dataclass
class SimState:
    base_position: np.ndarray  # (3,) world, m
    base_orientation: np.ndarray  # (4,) unit quaternion (w, x, y, z)
    base_lin_vel: np.ndarray  # (3,) body frame, m/s
    base_ang_vel: np.ndarray  # (3,) body frame, rad/s
    q: np.ndarray  # (12,) rad
    q_dot: np.ndarray  # (12,) rad/s
    tau_applied: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINTS))
    foot_contact: np.ndarray = field(default_factory=lambda: np.zeros(N_LEGS, dtype=bool))
    sim_time: float = 0.0
    energy_accum: float = 0.0  # J
    # derived FK cache (R, feet_world, J), filled by the stepper
    fk: tuple | None = field(default=None, repr=False, compare=False)

    def copy(self) -> "SimState":
        return SimState(
            base_position=self.base_position.copy(),
            base_orientation=self.base_orientation.copy(),
            base_lin_vel=self.base_lin_vel.copy(),
            base_ang_vel=self.base_ang_vel.copy(),
            q=self.q.copy(),
            q_dot=self.q_dot.copy(),
            tau_applied=self.tau_applied.copy(),
            foot_contact=self.foot_contact.copy(),
            sim_time=self.sim_time,
            energy_accum=self.energy_accum,
            fk=self.fk,
        )

    def roll_pitch_yaw(self) -> tuple[float, float, float]:
        return roll_pitch_yaw(self.base_orientation)


def _cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product for (N, 3) arrays (or a broadcast 3-vector)."""
    a = np.broadcast_to(a, b.shape) if a.ndim == 1 else a
    out = np.empty_like(b)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


@dataclass
class ContactConfig:
    # 12 kg at rest on four feet penetrates mg/(4 k_normal) ~ 6 mm < 1 cm
    k_normal: float = 5000.0  # N/m
    c_normal: float = 100.0  # N s/m
    # tangential damping is integrated implicitly against the joints, so it
    # can sit far beyond the explicit stability limit and behaves like
    # stiction until the Coulomb cap engages (slip ~ mu f_n / c_tangent)
    c_tangent: float = 3000.0  # N s/m


def instantaneous_power(tau: np.ndarray, q_dot: np.ndarray) -> float:
    """Total mechanical motor power: sum of per-joint torque * velocity.

    The sum is raw and signed; negative totals mean net negative mechanical
    work. Callers choose whether to clamp.
    """
    tau = np.asarray(tau, dtype=np.float64)
    q_dot = np.asarray(q_dot, dtype=np.float64)
    if tau.shape != (N_JOINTS,) or q_dot.shape != (N_JOINTS,):
        raise ValueError(f"expected 12-vectors, got {tau.shape} and {q_dot.shape}")
    p = float(tau @ q_dot)
    if not np.isfinite(p):
        raise ValueError("non-finite torque or joint velocity")
    return p


def pd_torque(q_target: np.ndarray, state: SimState, gains: PdGains,
              motor_strength: np.ndarray | float = 1.0,
              tau_max: float = 33.5) -> np.ndarray:
    """PD torque toward ``q_target`` with zero target joint velocity.

    Per joint: tau = strength * clamp(kp (q_t - q) - kd q_dot, +-tau_max).
    """
    q_target = np.asarray(q_target, dtype=np.float64)
    if q_target.shape != (N_JOINTS,):
        raise ValueError(f"q_target must be a 12-vector, got {q_target.shape}")
    raw = gains.kp * (q_target - state.q) + gains.kd * (0.0 - state.q_dot)
    tau = motor_strength * np.clip(raw, -tau_max, tau_max)
    if not np.isfinite(tau.sum()):
        raise ValueError("non-finite PD torque (check q_target and motor_strength)")
    return tau


@dataclass
class _WorldParams:
    """Physical parameters the stepper needs; EnvParams satisfies this shape."""
    friction: float = 0.8
    payload: float = 0.0
    com_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))


DEFAULT_WORLD = _WorldParams()

# payload mass rides this far above the torso CoM (strapping point)
PAYLOAD_MOUNT = np.array([0.0, 0.0, 0.05])


def combined_com(model: RobotModel, params) -> tuple[float, np.ndarray]:
    """Total mass and torso-frame CoM of torso plus payload."""
    total = model.torso_mass + params.payload
    com = np.asarray(params.com_offset, dtype=np.float64) + \
        (params.payload / total) * PAYLOAD_MOUNT
    return total, com


class QuadrupedSim:
    """Owns the model and physics options; states flow through `step`.

    A sim instance is single-threaded; run one per worker. ``gravity`` and
    ``contacts_enabled`` are test hooks. ``positive_power_only`` switches the
    energy meter from the raw signed integral to sum(max(tau*qdot, 0)).
    """

    def __init__(self, model: RobotModel, contact: ContactConfig | None = None,
                 gravity: float = GRAVITY, contacts_enabled: bool = True,
                 positive_power_only: bool = False):
        self.model = model
        self.contact = contact or ContactConfig()
        self.gravity = gravity
        self.contacts_enabled = contacts_enabled
        self.positive_power_only = positive_power_only
        self._inertia_inv = np.linalg.inv(model.torso_inertia)
        # contiguous copies for the compiled kernel
        self._k_hips = np.ascontiguousarray(model.hip_positions)
        self._k_l1 = np.ascontiguousarray(model.upper_leg)
        self._k_l2 = np.ascontiguousarray(model.lower_leg)
        self._k_limits = np.ascontiguousarray(model.joint_limits)
        self._k_inertia = np.ascontiguousarray(model.torso_inertia)
        self._k_inertia_inv = np.ascontiguousarray(self._inertia_inv)

    def kernel_args(self, terrain: TerrainField, params) -> tuple:
        """Static argument block for ``_kernels.control_step``."""
        c = self.contact
        com = np.ascontiguousarray(np.asarray(params.com_offset, dtype=np.float64))
        return (np.ascontiguousarray(terrain.heightmap),
                float(terrain.origin[0]), float(terrain.origin[1]),
                float(terrain.cell_size), terrain.is_flat,
                self._k_hips, self._k_l1, self._k_l2, self._k_limits,
                self._k_inertia, self._k_inertia_inv,
                float(self.model.torso_mass), float(self.model.tau_max),
                float(self.model.joint_reflected_inertia),
                float(self.model.joint_friction),
                float(c.k_normal), float(c.c_normal), float(c.c_tangent),
                float(params.friction), float(params.payload), com,
                float(PAYLOAD_MOUNT[2]), float(self.gravity))

    def _fk(self, state: SimState):
        """(R, feet_world, J) for a state, cached on the state object.

        The cache key guards against in-place mutation of state arrays
        between steps (tests and controllers do this when crafting states).
        """
        key = (float(state.q.sum()), float(state.base_position.sum()),
               float(state.base_orientation[0]), float(state.base_orientation[2]))
        if state.fk is None or state.fk[0] != key:
            R = quat_to_matrix(state.base_orientation)
            feet_body = self.model.foot_positions_body(state.q)
            feet_world = state.base_position + feet_body @ R.T
            J = self.model.leg_jacobians_body(state.q)
            state.fk = (key, R, feet_world, J)
        return state.fk[1:]

    # -- state construction -------------------------------------------------

    def standing_state(self, terrain: TerrainField, params=DEFAULT_WORLD,
                       x: float = 0.0, y: float = 0.0) -> SimState:
        """Nominal stand placed so the lowest foot carries its share of weight."""
        model = self.model
        q = model.nominal_stand_q.copy()
        feet = model.foot_positions_body(q)
        ground = terrain.heights_at(x + feet[:, 0], y + feet[:, 1])
        total_mass, _ = combined_com(model, params)
        settle = total_mass * self.gravity / (N_LEGS * self.contact.k_normal)
        base_z = float(np.max(ground - feet[:, 2])) - settle
        return SimState(
            base_position=np.array([x, y, base_z]),
            base_orientation=IDENTITY_QUAT.copy(),
            base_lin_vel=np.zeros(3),
            base_ang_vel=np.zeros(3),
            q=q,
            q_dot=np.zeros(N_JOINTS),
        )

    # -- contact model -------------------------------------------------------

    def contact_forces(self, state: SimState, terrain: TerrainField,
                       params=DEFAULT_WORLD):
        """World-frame ground reaction per foot: (forces (4,3), penetration (4,))."""
        R, feet_world, J = self._fk(state)
        ground = terrain.heights_at(feet_world[:, 0], feet_world[:, 1])
        pen = ground - feet_world[:, 2]
        forces = np.zeros((N_LEGS, 3))
        if not self.contacts_enabled:
            return forces, pen, feet_world, R
        mask = pen > 0.0
        if np.any(mask):
            feet_rel_world = feet_world - state.base_position
            v_world = R @ state.base_lin_vel
            w_world = R @ state.base_ang_vel
            qd = state.q_dot.reshape(N_LEGS, 3)
            foot_vel = (v_world
                        + _cross_rows(w_world, feet_rel_world)
                        + np.matmul(J, qd[:, :, None])[:, :, 0] @ R.T)
            c = self.contact
            fn = c.k_normal * np.clip(pen, 0.0, None) - c.c_normal * foot_vel[:, 2]
            fn = np.clip(fn, 0.0, None) * mask
            ft = -c.c_tangent * foot_vel[:, :2]
            ft_norm = np.sqrt(ft[:, 0] ** 2 + ft[:, 1] ** 2)
            cap = params.friction * fn
            scale = np.where(ft_norm > cap, np.divide(cap, ft_norm,
                                                      out=np.ones_like(ft_norm),
                                                      where=ft_norm > 0), 1.0)
            forces[:, :2] = ft * (scale * mask)[:, None]
            forces[:, 2] = fn
        return forces, pen, feet_world, R

    # -- stepping ------------------------------------------------------------

    def step(self, state: SimState, tau: np.ndarray, terrain: TerrainField,
             params=DEFAULT_WORLD, dt: float = SIM_DT) -> SimState:
        """Advance one integration step under ``tau`` (N m, 12-vector)."""
        tau = np.ascontiguousarray(tau, dtype=np.float64)
        if tau.shape != (N_JOINTS,):
            raise ValueError(f"tau must be a 12-vector, got {tau.shape}")
        if not np.isfinite(tau.sum()):
            raise ValueError("non-finite torque command")
        return self.run_substeps(state, _NO_PD, _ZERO12, 0.0, 0.0, _ONES12,
                                 tau, terrain, params, dt, 1)[0]

    def run_substeps(self, state: SimState, pd_mask: np.ndarray,
                     q_target: np.ndarray, kp: float, kd: float,
                     strength: np.ndarray, tau_ff: np.ndarray,
                     terrain: TerrainField, params, dt: float,
                     n_sub: int) -> tuple["SimState", float, float]:
        """Advance ``n_sub`` substeps with per-joint PD/feedforward torque.

        Returns (new state, mean raw power, mean positive-clamped power).
        Power is metered per substep as torque times the midpoint joint
        velocity, so the integrated energy equals the motor work tau * dq.
        """
        out = _kernels.control_step(
            state.base_position, state.base_orientation, state.base_lin_vel,
            state.base_ang_vel, state.q, state.q_dot, state.energy_accum,
            pd_mask, q_target, kp, kd, strength, tau_ff,
            *self.kernel_args(terrain, params),
            dt, n_sub, self.positive_power_only, self.contacts_enabled)
        (pos, quat, v_body, w_body, q, qd, tau_out, contacts, energy,
         p_raw, p_pos, ok) = out
        if not ok:
            raise SimulationDiverged(
                f"non-finite state near t={state.sim_time:.4f}s", state.copy())
        new = SimState(
            base_position=pos, base_orientation=quat, base_lin_vel=v_body,
            base_ang_vel=w_body, q=q, q_dot=qd, tau_applied=tau_out,
            foot_contact=np.asarray(contacts, dtype=bool),
            sim_time=state.sim_time + dt * n_sub, energy_accum=float(energy))
        return new, float(p_raw), float(p_pos)

    def settle(self, state: SimState, terrain: TerrainField, params=DEFAULT_WORLD,
               gains: PdGains | None = None, duration: float = 1.0,
               dt: float = SIM_DT) -> SimState:
        """Hold the nominal stand under PD until transients die out."""
        gains = gains or PdGains()
        q_target = self.model.nominal_stand_q
        for _ in range(int(round(duration / dt))):
            tau = pd_torque(q_target, state, gains, 1.0, self.model.tau_max)
            state = self.step(state, tau, terrain, params, dt)
        return state

    def mechanical_energy(self, state: SimState, params=DEFAULT_WORLD) -> float:
        """Kinetic plus potential energy of the free-floating torso."""
        total_mass, com_body = combined_com(self.model, params)
        R = quat_to_matrix(state.base_orientation)
        com_z = state.base_position[2] + (R @ com_body)[2]
        v = R @ state.base_lin_vel
        w = state.base_ang_vel
        ke = 0.5 * total_mass * float(v @ v) + 0.5 * float(w @ self.model.torso_inertia @ w)
        return ke + total_mass * self.gravity * com_z
