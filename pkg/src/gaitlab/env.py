"""Reinforcement-learning environment around the simulator and terrain.

Observation (30 dims): 12 joint positions, 12 joint velocities, torso roll
and pitch, 4 binary foot contacts. Action (12 dims): delta joint targets
added to the nominal stand pose, clamped per joint type.

One control step = 4 simulator substeps (100 Hz control over 400 Hz physics).
Reward: r = r_forward + alpha_energy * r_energy + alive, with
r_forward = -alpha_forward |v_x - v*| - v_y^2 - yaw_rate^2 and
r_energy = -(mean motor power over the substeps).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import terrain as terrain_mod
from .dynamics import (SIM_DT, QuadrupedSim, SimState, combined_com)
from .randomize import (PROFILES, VEL_SMOOTHING, EnvParams,
                        PerturbationProfile, factor_vector)
from .robot import N_JOINTS, N_LEGS, RobotModel, a1_like
from .terrain import FractalParams, TerrainField

_ALL_PD = np.ones(N_JOINTS, dtype=bool)
_ZERO_TAU = np.zeros(N_JOINTS)

OBS_DIM = 30
ACT_DIM = 12

# per-joint action clamps: HAA +-0.15, HFE +-0.4, KFE +-0.4 rad
ACTION_BOUND = np.tile(np.array([0.15, 0.4, 0.4]), N_LEGS)

MAX_EPISODE_STEPS = 1000
CONTROL_SUBSTEPS = 4
TERMINATE_HEIGHT = 0.28  # m, torso origin above terrain directly beneath
TERMINATE_ROLL = 0.4  # rad
TERMINATE_PITCH = 0.2  # rad


class EpisodeFinished(RuntimeError):
    """step() called on an episode that already ended."""


def compute_reward(vx: float, vy: float, yaw_rate: float, power: float,
                   rc: "RewardConfig") -> tuple[float, float, float, float]:
    """(total, forward, energy, alive) reward terms for one control step."""
    r_forward = (-rc.alpha_forward * abs(vx - rc.v_target)
                 - vy * vy - yaw_rate * yaw_rate)
    r_energy = -power
    r_alive = rc.alive_bonus
    return (r_forward + rc.alpha_energy * r_energy + r_alive,
            r_forward, r_energy, r_alive)


@dataclass
class RewardConfig:
    v_target: float
    alpha_energy: float = 0.04  # weight on -tau^T qdot
    alpha_forward: float = 20.0  # weight on |v_x - v_target|
    alive_coef: float = 20.0  # alive bonus = alive_coef * v_target
    # optional hardware-protection add-ons, default off; they are not part of
    # the core reward decomposition
    w_torque: float = 0.0
    w_ground_impact: float = 0.0

    @property
    def alive_bonus(self) -> float:
        return self.alive_coef * self.v_target


@dataclass
class EnvConfig:
    reward: RewardConfig
    terrain_params: FractalParams = field(default_factory=lambda: terrain_mod.FLAT)
    terrain_extent: tuple[float, float] = (14.0, 6.0)
    terrain_origin: tuple[float, float] = (-2.0, -3.0)
    terrain_cell: float = 0.05
    profile: str = "normal"
    episode_steps: int = MAX_EPISODE_STEPS
    positive_power_only: bool = False
    initial_jitter: float = 0.0  # optional stand-pose noise, rad
    resample_prob: float | None = None  # override profile value if set

    def perturbation_profile(self) -> PerturbationProfile:
        return PROFILES[self.profile]


class LocomotionEnv:
    """Episode orchestration: reset, control steps, logging.

    One environment per worker; instances share nothing mutable.
    """

    def __init__(self, config: EnvConfig, model: RobotModel | None = None,
                 seed: int = 0):
        self.config = config
        # per-instance copy so velocity commands never leak across workers
        self.reward = replace(config.reward)
        self.model = model or a1_like()
        self.sim = QuadrupedSim(self.model,
                                positive_power_only=config.positive_power_only)
        self.terrain: TerrainField = terrain_mod.generate(
            config.terrain_params, config.terrain_extent, config.terrain_cell,
            seed=seed, origin=config.terrain_origin)
        self._rng = np.random.default_rng(seed)
        self._profile = config.perturbation_profile()
        self.params: EnvParams | None = None
        self.state: SimState | None = None
        self._steps = 0
        self._done = True
        self._smoothed_vel = np.zeros(3)
        self._log_rows: list[dict] | None = None

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.params = EnvParams.sample(self._profile, self._rng)
        if self.config.resample_prob is not None:
            self.params.resample_prob = self.config.resample_prob
        self.state = self.sim.standing_state(self.terrain, self.params)
        if self.config.initial_jitter > 0.0:
            self.state.q = self.state.q + self._rng.normal(
                0.0, self.config.initial_jitter, N_JOINTS)
        self._steps = 0
        self._done = False
        self._smoothed_vel = np.zeros(3)
        if self._log_rows is not None:
            self._log_rows = []
        return self.observation()

    def observation(self) -> np.ndarray:
        s = self.state
        roll, pitch, _ = s.roll_pitch_yaw()
        return np.concatenate([s.q, s.q_dot, [roll, pitch],
                               s.foot_contact.astype(np.float64)])

    def step(self, action: np.ndarray):
        """Apply one 100 Hz control step. Returns (obs, reward, done, info)."""
        if self._done:
            raise EpisodeFinished("reset() the environment before stepping")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (ACT_DIM,) or not np.all(np.isfinite(action)):
            raise ValueError("action must be a finite 12-vector")
        delta = np.clip(action, -ACTION_BOUND, ACTION_BOUND)
        q_target = self.model.nominal_stand_q + delta

        contacts_before = self.state.foot_contact.copy()
        self.state, power_raw, power_pos = self.sim.run_substeps(
            self.state, _ALL_PD, q_target, self.params.kp, self.params.kd,
            self.params.motor_strength, _ZERO_TAU, self.terrain, self.params,
            SIM_DT, CONTROL_SUBSTEPS)
        tau = self.state.tau_applied

        self._steps += 1
        s = self.state
        vx, vy = float(s.base_lin_vel[0]), float(s.base_lin_vel[1])
        yaw_rate = float(s.base_ang_vel[2])
        roll, pitch, _ = s.roll_pitch_yaw()

        rc = self.reward
        reward, r_forward, r_energy, r_alive = compute_reward(
            vx, vy, yaw_rate, power_raw, rc)
        r_addon = 0.0
        if rc.w_torque or rc.w_ground_impact:
            impact = float(np.sum(s.foot_contact & ~contacts_before))
            r_addon = (-rc.w_torque * float(np.sum(tau * tau))
                       - rc.w_ground_impact * impact)
            reward += r_addon

        height = float(s.base_position[2]) - self.terrain.height_at(
            float(s.base_position[0]), float(s.base_position[1]))
        fell = (height < TERMINATE_HEIGHT or abs(roll) > TERMINATE_ROLL
                or abs(pitch) > TERMINATE_PITCH)
        timeout = self._steps >= self.config.episode_steps
        self._done = bool(fell or timeout)

        self._smoothed_vel = (VEL_SMOOTHING * np.array([vx, vy, yaw_rate])
                              + (1.0 - VEL_SMOOTHING) * self._smoothed_vel)

        # one draw per step keeps the stream deterministic regardless of outcome
        if self._rng.random() < self.params.resample_prob:
            keep = self.params.resample_prob
            self.params = EnvParams.sample(self._profile, self._rng)
            self.params.resample_prob = keep

        info = {
            "vx": vx, "vy": vy, "yaw_rate": yaw_rate,
            "roll": roll, "pitch": pitch, "height": height,
            "power_raw": power_raw, "power_pos": power_pos,
            "r_forward": r_forward, "r_energy": r_energy, "r_alive": r_alive,
            "r_addon": r_addon,
            "v_target": rc.v_target,
            "q_target": q_target,
            "fell": fell, "timeout": timeout,
            "factors": self.factor_vector(),
            "energy_accum": s.energy_accum,
            "tau": tau,
        }
        if self._log_rows is not None:
            self._append_log_row(info)
        return self.observation(), float(reward), self._done, info

    def set_v_target(self, v: float) -> None:
        """Change the commanded forward speed; takes effect next step and
        moves the alive bonus with it."""
        self.reward.v_target = float(v)

    # -- environment factors ---------------------------------------------------

    def factor_vector(self) -> np.ndarray:
        _, com = combined_com(self.model, self.params)
        return factor_vector(self.params, com, self._smoothed_vel)

    @property
    def done(self) -> bool:
        return self._done

    @property
    def steps(self) -> int:
        return self._steps

    # -- trajectory logging ----------------------------------------------------

    def enable_logging(self) -> None:
        self._log_rows = []

    def _append_log_row(self, info: dict) -> None:
        s = self.state
        row = {"t": round(s.sim_time, 6)}
        for i in range(N_JOINTS):
            row[f"q{i}"] = s.q[i]
        for i in range(N_JOINTS):
            row[f"qd{i}"] = s.q_dot[i]
        for i in range(N_JOINTS):
            row[f"tau{i}"] = s.tau_applied[i]
        for axis, v in zip("xyz", s.base_position):
            row[f"base_{axis}"] = v
        for name, v in zip(("qw", "qx", "qy", "qz"), s.base_orientation):
            row[f"base_{name}"] = v
        for axis, v in zip("xyz", s.base_lin_vel):
            row[f"vel_{axis}"] = v
        for axis, v in zip("xyz", s.base_ang_vel):
            row[f"angvel_{axis}"] = v
        for i, leg in enumerate(("rf", "lf", "rr", "lr")):
            row[f"contact_{leg}"] = int(s.foot_contact[i])
        row.update(
            r_forward=info["r_forward"], r_energy=info["r_energy"],
            r_alive=info["r_alive"],
            power_raw=info["power_raw"], power_pos=info["power_pos"],
            energy_accum=info["energy_accum"],
        )
        self._log_rows.append(row)

    def write_trajectory_csv(self, path: str) -> None:
        if not self._log_rows:
            raise ValueError("no logged rows; call enable_logging() before reset")
        fieldnames = list(self._log_rows[0].keys())
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=fieldnames)
            w.writeheader()
            for row in self._log_rows:
                w.writerow({k: _fmt(v) for k, v in row.items()})

    @property
    def log_rows(self) -> list[dict]:
        return list(self._log_rows or [])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
