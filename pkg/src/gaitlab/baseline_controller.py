"""Scripted gait-schedule controller for the energy-vs-speed baseline.

Stance legs get joint torques from a per-tick quasi-static force allocation
(small bounded least-squares over ground-reaction forces, friction box with
the current mu, mapped through the foot Jacobian transpose). Swing legs track
a smooth bump trajectory via IK + PD. This deliberately replaces the
condensed-horizon convex MPC of the usual baselines: the artifact cares about
contact timing and energy accounting, not force-profile fidelity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import lsq_linear

from .dynamics import (SIM_DT, PdGains, QuadrupedSim, SimState,
                       SimulationDiverged, combined_com, pd_torque)
from .gait_schedule import (GAITS, GaitPhaseState, GaitScheduleConfig,
                            stance_duration)
from .randomize import FIXED, EnvParams
from .robot import N_JOINTS, N_LEGS, RobotModel, a1_like
from .rotation import quat_to_matrix
from .terrain import TerrainField, flat_field

CONTROL_DT = 0.01  # controller tick, 100 Hz over 400 Hz physics
_ALL_PD = np.ones(N_JOINTS, dtype=bool)


@dataclass
class ControllerConfig:
    base_height: float = 0.30  # m, torso-origin setpoint above terrain
    step_height: float = 0.08  # m swing clearance
    stance_press: float = 0.01  # m, stance foothold pressed below ground
    kv: float = 4.0  # 1/s, horizontal velocity tracking
    kp_height: float = 100.0  # 1/s^2
    kd_height: float = 20.0  # 1/s
    kp_att: float = 800.0  # 1/s^2
    kd_att: float = 80.0  # 1/s
    thrust: float = 0.0  # m/s^2 extra vertical push during stance (bounce)
    f_max: float = 200.0  # N per foot, vertical
    moment_weight: float = 2.0
    force_reg: float = 1e-4
    raibert_gain: float = 0.05  # s, foothold correction per m/s speed error
    lateral_gain: float = 0.0  # s, sideways foothold shift per m/s sway
    ramp_time: float = 1.0  # s, stride/clearance ramp-in after start


# Tuned per gait on the shipped model; all fields overridable.
CONTROLLER_PRESETS = {
    "walk": ControllerConfig(step_height=0.05),
    "trot": ControllerConfig(step_height=0.05, kv=8.0),
    "bounce": ControllerConfig(step_height=0.08, stance_press=0.03,
                               thrust=4.0, f_max=400.0, kv=8.0,
                               raibert_gain=0.0),
}


def swing_trajectory(leg: int, phase: float, v_target: float,
                     step_height: float = 0.08,
                     stance_dur: float = 0.25) -> np.ndarray:
    """Swing-foot target relative to the hip's ground projection.

    Symmetric Raibert-style profile: the foot travels from half a stance
    stride behind the hip to half a stride ahead, with a sinusoidal vertical
    bump peaking at ``step_height`` at mid-swing. Start and end are at ground
    level.
    """
    phase = float(np.clip(phase, 0.0, 1.0))
    stride = v_target * stance_dur
    sm = 0.5 * (1.0 - np.cos(np.pi * phase))  # smooth 0 -> 1
    x = stride * (sm - 0.5)
    z = step_height * np.sin(np.pi * phase)
    return np.array([x, 0.0, z])


def stance_force_control(model: RobotModel, state: SimState,
                         stance_mask: np.ndarray, v_target: float,
                         friction: float, cfg: ControllerConfig,
                         terrain: TerrainField,
                         params: EnvParams | None = None,
                         gravity: float = 9.81):
    """Ground-reaction forces for the stance feet and the joint torques.

    Returns (forces (4, 3) world frame, tau (12,), info). Swing-leg rows and
    joints are zero. The returned forces satisfy 0 <= f_z <= f_max and
    |f_tangential| <= friction * f_z exactly.
    """
    params = params or EnvParams(**{})
    stance = np.flatnonzero(stance_mask)
    forces = np.zeros((N_LEGS, 3))
    tau = np.zeros(N_JOINTS)
    info = {"n_stance": len(stance), "fallback": False}
    if len(stance) == 0:
        return forces, tau, info

    R = quat_to_matrix(state.base_orientation)
    total_mass, com_body = combined_com(model, params)
    com_world = state.base_position + R @ com_body
    feet_body = model.foot_positions_body(state.q)
    feet_world = state.base_position + feet_body @ R.T

    v_world = R @ state.base_lin_vel
    roll, pitch, _ = state.roll_pitch_yaw()
    ground = terrain.height_at(float(state.base_position[0]),
                               float(state.base_position[1]))
    height = float(state.base_position[2]) - ground

    a_des = np.array([
        cfg.kv * (v_target - v_world[0]),
        cfg.kv * (0.0 - v_world[1]),
        gravity + cfg.thrust
        + cfg.kp_height * (cfg.base_height - height)
        + cfg.kd_height * (0.0 - v_world[2]),
    ])
    f_des = total_mass * a_des

    att_err = -np.array([roll, pitch, 0.0])
    m_des_body = model.torso_inertia @ (cfg.kp_att * att_err
                                        + cfg.kd_att * (0.0 - state.base_ang_vel))
    m_des = R @ m_des_body

    # min || [I; w skew(r)] f - [F; w M] ||^2 + reg ||f||^2, boxed
    n = len(stance)
    A = np.zeros((6, 3 * n))
    for k, i in enumerate(stance):
        r = feet_world[i] - com_world
        A[0:3, 3 * k:3 * k + 3] = np.eye(3)
        A[3:6, 3 * k:3 * k + 3] = cfg.moment_weight * _skew(r)
    b = np.concatenate([f_des, cfg.moment_weight * m_des])
    A_reg = np.vstack([A, np.sqrt(cfg.force_reg) * np.eye(3 * n)])
    b_reg = np.concatenate([b, np.zeros(3 * n)])
    t_cap = friction * cfg.f_max
    lb = np.tile([-t_cap, -t_cap, 0.0], n)
    ub = np.tile([t_cap, t_cap, cfg.f_max], n)
    try:
        sol = lsq_linear(A_reg, b_reg, bounds=(lb, ub), tol=1e-8)
        f = sol.x
    except Exception:
        # degenerate geometry; fall back to the damped normal-equation solve
        f = np.linalg.lstsq(A_reg, b_reg, rcond=1e-6)[0]
        f = np.clip(f, lb, ub)
        info["fallback"] = True

    for k, i in enumerate(stance):
        fi = f[3 * k:3 * k + 3].copy()
        fi[2] = np.clip(fi[2], 0.0, cfg.f_max)
        t_norm = float(np.hypot(fi[0], fi[1]))
        cap = friction * fi[2]
        if t_norm > cap:
            fi[:2] *= 0.0 if t_norm == 0.0 else cap / t_norm
        forces[i] = fi

    J = model.leg_jacobians_body(state.q)
    f_body = forces @ R
    for i in stance:
        tau[3 * i:3 * i + 3] = -J[i].T @ f_body[i]
    np.clip(tau, -model.tau_max, model.tau_max, out=tau)
    return forces, tau, info


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


class GaitController:
    """Pure function of (state, time): scripted gait -> joint torques."""

    def __init__(self, model: RobotModel, gait: GaitScheduleConfig | str,
                 v_target: float, cfg: ControllerConfig | None = None,
                 swing_gains: PdGains | None = None):
        self.model = model
        self.gait = GAITS[gait] if isinstance(gait, str) else gait
        self.v_target = float(v_target)
        # validates the stance-duration law up front
        self.stance_dur = stance_duration(self.gait, self.v_target)
        self.cfg = cfg or replace(CONTROLLER_PRESETS.get(self.gait.name,
                                                         ControllerConfig()))
        self.swing_gains = swing_gains or PdGains(55.0, 0.8)

    def control_tick(self, state: SimState, terrain: TerrainField, t: float,
                     friction: float = 0.8, params: EnvParams | None = None):
        """Compute the 100 Hz command.

        Every leg tracks an IK joint target under PD: swing legs follow the
        bump trajectory, stance legs sweep a ground-fixed foothold backward
        at the target speed (with a small downward press). Stance joints add
        the allocated ground-reaction forces as feedforward torque.
        """
        phases = GaitPhaseState.at(self.gait, self.v_target, t)
        stance_mask = phases.stance
        swing_prog = phases.swing_progress(self.gait)
        duty = np.asarray(self.gait.duty_factor)
        stance_prog = np.clip(phases.phase / duty, 0.0, 1.0)

        forces, tau_ff, info = stance_force_control(
            self.model, state, stance_mask, self.v_target, friction, self.cfg,
            terrain, params)

        q_target = np.empty_like(state.q)
        R = quat_to_matrix(state.base_orientation)
        v_world = R @ state.base_lin_vel
        # soft start: grow the stride and clearance in over the first cycle
        ramp = min(1.0, t / self.cfg.ramp_time) if self.cfg.ramp_time > 0 else 1.0
        stride = self.v_target * self.stance_dur * ramp
        for leg in range(N_LEGS):
            hip_world = state.base_position + R @ self.model.hip_positions[leg]
            y_rel = 0.0
            if stance_mask[leg]:
                # foothold fixed in the world: +stride/2 at touchdown,
                # -stride/2 at liftoff
                x_rel = stride * (0.5 - float(stance_prog[leg]))
                ground = terrain.height_at(float(hip_world[0] + x_rel),
                                           float(hip_world[1]))
                z = ground - self.cfg.stance_press
            else:
                # swing returns from the sweep's liftoff point to the next
                # foothold; touchdown offset shrinks with the speed error so
                # a slow body is not braked by a far-forward landing
                s = float(swing_prog[leg])
                x_lift = -0.5 * stride
                x_land = 0.5 * stride + self.cfg.raibert_gain \
                    * (float(v_world[0]) - self.v_target) * ramp
                sm = 0.5 * (1.0 - np.cos(np.pi * s))
                x_rel = x_lift + (x_land - x_lift) * sm
                y_rel = self.cfg.lateral_gain * float(v_world[1]) * ramp
                ground = terrain.height_at(float(hip_world[0] + x_rel),
                                           float(hip_world[1] + y_rel))
                z = ground + self.cfg.step_height * ramp * float(np.sin(np.pi * s))
            target_world = np.array([hip_world[0] + x_rel,
                                     hip_world[1] + y_rel, z])
            target_body = R.T @ (target_world - state.base_position)
            q_target[3 * leg:3 * leg + 3] = self.model.leg_ik(leg, target_body)
        return stance_mask, q_target, tau_ff, info

    def torques(self, state: SimState, stance_mask: np.ndarray,
                q_target: np.ndarray, tau_ff: np.ndarray) -> np.ndarray:
        """Per-substep torques: live PD on the IK targets plus the held
        stance-force feedforward."""
        tau = pd_torque(q_target, state, self.swing_gains, 1.0,
                        self.model.tau_max) + tau_ff
        return np.clip(tau, -self.model.tau_max, self.model.tau_max)


# fall thresholds for the scripted controller (wider than the RL episode
# rules: the gait clock keeps running through brief crouches, and bounce
# landings legitimately compress well below the walking height)
FALL_HEIGHT = 0.16
FALL_ROLL = 0.6
FALL_PITCH = 0.45


@dataclass
class GaitEpisodeLog:
    gait: str
    v_target: float
    sample_rate: float
    contacts: np.ndarray  # (T, 4) bool, simulated foot contacts
    scheduled: np.ndarray  # (T, 4) bool, emitted schedule
    speed: np.ndarray  # (T,) world-frame forward speed
    power_raw: np.ndarray  # (T,)
    power_pos: np.ndarray  # (T,)
    height: np.ndarray  # (T,)
    times: np.ndarray  # (T,)
    fell: bool
    realized_speed: float
    energy_per_meter_raw: float
    energy_per_meter_pos: float
    flight_fraction: float


def run_gait_episode(gait: str, v_target: float, duration: float = 8.0,
                     warmup: float = 2.0, model: RobotModel | None = None,
                     terrain: TerrainField | None = None,
                     cfg: ControllerConfig | None = None,
                     params: EnvParams | None = None,
                     seed: int = 0) -> GaitEpisodeLog:
    """Run the scripted controller and log contacts, speed, and power."""
    model = model or a1_like()
    terrain = terrain or flat_field(extent=(6.0 + 2.2 * duration, 4.0),
                                    cell_size=0.5, origin=(-3.0, -2.0))
    params = params or EnvParams.sample(FIXED, np.random.default_rng(seed))
    controller = GaitController(model, gait, v_target, cfg)
    sim = QuadrupedSim(model)
    state = sim.standing_state(terrain, params)
    state = sim.settle(state, terrain, params,
                       PdGains(params.kp, params.kd), duration=0.5)
    state.energy_accum = 0.0

    n_ticks = int(round(duration / CONTROL_DT))
    substeps = int(round(CONTROL_DT / SIM_DT))
    rows = {k: [] for k in ("contact", "sched", "speed", "p_raw", "p_pos",
                            "height", "t")}
    fell = False
    x_start = None
    energy_raw = 0.0
    energy_pos = 0.0
    strength = np.ones(12)
    t = 0.0
    for tick in range(n_ticks):
        stance_mask, q_target, tau_ff, _ = controller.control_tick(
            state, terrain, t, params.friction, params)
        try:
            state, p_raw, p_pos = sim.run_substeps(
                state, _ALL_PD, q_target, controller.swing_gains.kp,
                controller.swing_gains.kd, strength, tau_ff, terrain,
                params, SIM_DT, substeps)
        except SimulationDiverged:
            fell = True
            break
        t += CONTROL_DT

        R = quat_to_matrix(state.base_orientation)
        vx = float((R @ state.base_lin_vel)[0])
        ground = terrain.height_at(float(state.base_position[0]),
                                   float(state.base_position[1]))
        height = float(state.base_position[2]) - ground
        roll, pitch, _ = state.roll_pitch_yaw()
        in_measurement = t > warmup
        if in_measurement:
            if x_start is None:
                x_start = float(state.base_position[0])
                energy_raw = energy_pos = 0.0
            energy_raw += p_raw * CONTROL_DT
            energy_pos += p_pos * CONTROL_DT
            rows["contact"].append(state.foot_contact.copy())
            rows["sched"].append(stance_mask.copy())
            rows["speed"].append(vx)
            rows["p_raw"].append(p_raw)
            rows["p_pos"].append(p_pos)
            rows["height"].append(height)
            rows["t"].append(t)
        if height < FALL_HEIGHT or abs(roll) > FALL_ROLL or abs(pitch) > FALL_PITCH:
            fell = True
            break

    contacts = np.array(rows["contact"], dtype=bool).reshape(-1, N_LEGS)
    distance = 0.0
    if x_start is not None:
        distance = float(state.base_position[0]) - x_start
    elapsed = len(rows["t"]) * CONTROL_DT
    realized = distance / elapsed if elapsed > 0 else 0.0
    epm_raw = energy_raw / distance if distance > 0.05 else float("nan")
    epm_pos = energy_pos / distance if distance > 0.05 else float("nan")
    flight = float(np.mean(~contacts.any(axis=1))) if len(contacts) else 0.0
    return GaitEpisodeLog(
        gait=controller.gait.name, v_target=v_target, sample_rate=1.0 / CONTROL_DT,
        contacts=contacts,
        scheduled=np.array(rows["sched"], dtype=bool).reshape(-1, N_LEGS),
        speed=np.array(rows["speed"]), power_raw=np.array(rows["p_raw"]),
        power_pos=np.array(rows["p_pos"]), height=np.array(rows["height"]),
        times=np.array(rows["t"]), fell=fell, realized_speed=realized,
        energy_per_meter_raw=epm_raw, energy_per_meter_pos=epm_pos,
        flight_fraction=flight)


def sweep_grid(gait: str, step: float = 0.1) -> np.ndarray:
    lo, hi = GAITS[gait].speed_range
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 10)


def run_sweep(gaits: list[str], duration: float = 8.0,
              model: RobotModel | None = None, seed: int = 0) -> list[dict]:
    """Energy-vs-speed sweep rows over each gait's tested speed range."""
    rows = []
    for gait in gaits:
        for v in sweep_grid(gait):
            log = run_gait_episode(gait, float(v), duration=duration,
                                   model=model, seed=seed)
            rows.append({
                "gait": gait,
                "v_target": float(v),
                "realized_speed": log.realized_speed,
                "energy_per_meter_raw": log.energy_per_meter_raw,
                "energy_per_meter_pos": log.energy_per_meter_pos,
                "fell": log.fell,
            })
    return rows
