"""Quadruped model description and analytic leg kinematics.

Leg order everywhere is (RF, LF, RR, LR) — right-front, left-front,
right-rear, left-rear — and each leg has joints (HAA, HFE, KFE), so the
12-vector layout is ``q[3*leg + joint]``.

HAA rotates about the body x axis, HFE and KFE about the body y axis. With
all angles zero the leg points straight down from the hip.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

import numpy as np
import yaml

LEG_NAMES = ("RF", "LF", "RR", "LR")
JOINT_NAMES = ("HAA", "HFE", "KFE")
N_LEGS = 4
N_JOINTS = 12

# indices of each joint type inside the 12-vector
HAA_IDX = np.array([0, 3, 6, 9])
HFE_IDX = np.array([1, 4, 7, 10])
KFE_IDX = np.array([2, 5, 8, 11])


@dataclass
class RobotModel:
    """Physical description of the simulated quadruped."""

    torso_mass: float  # kg (legs are treated as massless)
    torso_inertia: np.ndarray  # (3, 3) kg m^2 about the torso CoM
    hip_positions: np.ndarray  # (4, 3) m, hips in the torso frame
    upper_leg: np.ndarray  # (4,) m
    lower_leg: np.ndarray  # (4,) m
    joint_limits: np.ndarray  # (12, 2) rad
    nominal_stand_q: np.ndarray  # (12,) rad
    hip_height_nominal: float  # m, standing hip height (Froude h)
    tau_max: float = 33.5  # N m per joint
    joint_reflected_inertia: float = 0.05  # kg m^2, lumped rotor + leg
    joint_friction: float = 0.03  # N m s/rad viscous
    name: str = "quadruped"

    def __post_init__(self):
        self.torso_inertia = np.asarray(self.torso_inertia, dtype=np.float64)
        self.hip_positions = np.asarray(self.hip_positions, dtype=np.float64)
        self.upper_leg = np.asarray(self.upper_leg, dtype=np.float64)
        self.lower_leg = np.asarray(self.lower_leg, dtype=np.float64)
        self.joint_limits = np.asarray(self.joint_limits, dtype=np.float64)
        self.nominal_stand_q = np.asarray(self.nominal_stand_q, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        if self.torso_mass <= 0:
            raise ValueError("torso_mass must be > 0")
        if np.any(self.upper_leg <= 0) or np.any(self.lower_leg <= 0):
            raise ValueError("link lengths must be > 0")
        eigs = np.linalg.eigvalsh(0.5 * (self.torso_inertia + self.torso_inertia.T))
        if np.any(eigs <= 0):
            raise ValueError("torso_inertia must be positive definite")
        if self.hip_positions.shape != (N_LEGS, 3):
            raise ValueError("hip_positions must be (4, 3)")
        if self.joint_limits.shape != (N_JOINTS, 2):
            raise ValueError("joint_limits must be (12, 2)")
        lo, hi = self.joint_limits[:, 0], self.joint_limits[:, 1]
        if np.any(self.nominal_stand_q < lo) or np.any(self.nominal_stand_q > hi):
            raise ValueError("nominal_stand_q violates joint_limits")
        if self.hip_height_nominal <= 0:
            raise ValueError("hip_height_nominal must be > 0")

    def foot_positions_body(self, q: np.ndarray) -> np.ndarray:
        """Foot positions in the torso frame, (4, 3)."""
        qa = q[HAA_IDX]
        qh = q[HFE_IDX]
        qk = q[KFE_IDX]
        l1 = self.upper_leg
        l2 = self.lower_leg
        x = -l1 * np.sin(qh) - l2 * np.sin(qh + qk)
        zl = -l1 * np.cos(qh) - l2 * np.cos(qh + qk)
        ca, sa = np.cos(qa), np.sin(qa)
        p = np.empty((N_LEGS, 3))
        p[:, 0] = x
        p[:, 1] = -sa * zl
        p[:, 2] = ca * zl
        return self.hip_positions + p

    def leg_jacobians_body(self, q: np.ndarray) -> np.ndarray:
        """d(foot position in torso frame)/d(leg joints), (4, 3, 3)."""
        qa = q[HAA_IDX]
        qh = q[HFE_IDX]
        qk = q[KFE_IDX]
        l1 = self.upper_leg
        l2 = self.lower_leg
        shk = np.sin(qh + qk)
        chk = np.cos(qh + qk)
        x = -l1 * np.sin(qh) - l2 * shk
        zl = -l1 * np.cos(qh) - l2 * chk
        ca, sa = np.cos(qa), np.sin(qa)
        J = np.empty((N_LEGS, 3, 3))
        # d/d qa
        J[:, 0, 0] = 0.0
        J[:, 1, 0] = -ca * zl
        J[:, 2, 0] = -sa * zl
        # d/d qh:  dx/dqh = zl, dzl/dqh = -x
        J[:, 0, 1] = zl
        J[:, 1, 1] = sa * x
        J[:, 2, 1] = -ca * x
        # d/d qk
        J[:, 0, 2] = -l2 * chk
        J[:, 1, 2] = -sa * l2 * shk
        J[:, 2, 2] = ca * l2 * shk
        return J

    def leg_ik(self, leg: int, target_body: np.ndarray) -> np.ndarray:
        """Joint angles (HAA, HFE, KFE) reaching ``target_body`` (torso frame).

        Out-of-reach targets are clamped to the workspace boundary; the
        result is additionally clamped to the joint limits.
        """
        rel = np.asarray(target_body, dtype=np.float64) - self.hip_positions[leg]
        px, py, pz = rel
        qa = float(np.arctan2(py, -pz))
        r = float(np.hypot(py, pz))
        u, w = -px, r  # planar 2-link coordinates (forward, down)
        l1, l2 = float(self.upper_leg[leg]), float(self.lower_leg[leg])
        d2 = u * u + w * w
        c_knee = np.clip((d2 - l1 * l1 - l2 * l2) / (2 * l1 * l2), -1.0, 1.0)
        qk = -float(np.arccos(c_knee))
        qh = float(np.arctan2(u, w) - np.arctan2(l2 * np.sin(qk), l1 + l2 * np.cos(qk)))
        lo = self.joint_limits[3 * leg:3 * leg + 3, 0]
        hi = self.joint_limits[3 * leg:3 * leg + 3, 1]
        return np.clip(np.array([qa, qh, qk]), lo, hi)

    def nominal_base_height(self) -> float:
        """Torso-origin height above flat ground in the nominal stand."""
        feet = self.foot_positions_body(self.nominal_stand_q)
        return -float(np.mean(feet[:, 2]))


def a1_like() -> RobotModel:
    """Committed default model approximating the A1 (about 12 kg total)."""
    with importlib.resources.files("gaitlab.data").joinpath("a1_like.yaml").open() as f:
        return load_model(f)


def load_model(source) -> RobotModel:
    """Load a RobotModel from a YAML file path or open stream."""
    if hasattr(source, "read"):
        raw = yaml.safe_load(source)
    else:
        with open(source, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    try:
        inertia = raw["torso_inertia"]
        if np.asarray(inertia).ndim == 1:
            inertia = np.diag(np.asarray(inertia, dtype=np.float64))
        per_leg_limits = np.asarray(raw["joint_limits_per_leg"], dtype=np.float64)
        return RobotModel(
            torso_mass=float(raw["torso_mass"]),
            torso_inertia=inertia,
            hip_positions=np.asarray(raw["hip_positions"], dtype=np.float64),
            upper_leg=np.full(N_LEGS, float(raw["upper_leg"])),
            lower_leg=np.full(N_LEGS, float(raw["lower_leg"])),
            joint_limits=np.tile(per_leg_limits, (N_LEGS, 1)),
            nominal_stand_q=np.tile(np.asarray(raw["nominal_stand_leg_q"], dtype=np.float64), N_LEGS),
            hip_height_nominal=float(raw["hip_height_nominal"]),
            tau_max=float(raw.get("tau_max", 33.5)),
            joint_reflected_inertia=float(raw.get("joint_reflected_inertia", 0.05)),
            joint_friction=float(raw.get("joint_friction", 0.03)),
            name=str(raw.get("name", "quadruped")),
        )
    except KeyError as e:
        raise ValueError(f"robot model config missing field {e}") from e
