"""Scripted gait clocks: duty factors, leg phases, stance-duration laws.

Each leg runs a unit-cycle clock at phase ``frac(t / period + initial_phase)``.
Legs listed in ``initial_swing`` use a swing-first cycle layout (swing on
[0, 1 - duty), stance on [1 - duty, 1)); the others are stance-first (stance
on [0, duty)). The layout choice is what makes the trot quadruple
[0.9, 0, 0, 0.9] put the two diagonal pairs exactly half a cycle apart.

The cycle period follows from the per-gait stance-duration law:
period = stance_duration(v) / duty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .robot import N_LEGS


@dataclass(frozen=True)
class GaitScheduleConfig:
    name: str
    duty_factor: tuple[float, float, float, float]
    initial_phase: tuple[float, float, float, float]  # legs (RF, LF, RR, LR)
    stance_law: tuple[float, float]  # stance seconds = a * v_target + b
    initial_swing: frozenset[int]
    speed_range: tuple[float, float]  # tested v_target range, m/s

    def __post_init__(self):
        if not all(0.0 < d <= 1.0 for d in self.duty_factor):
            raise ValueError("duty factors must be in (0, 1]")
        if not all(0.0 <= p < 1.0 for p in self.initial_phase):
            raise ValueError("initial phases must be in [0, 1)")


WALK = GaitScheduleConfig(
    name="walk",
    duty_factor=(0.8, 0.8, 0.8, 0.8),
    initial_phase=(0.0, 0.25, 0.5, 0.0),
    stance_law=(-0.5, 0.75),
    initial_swing=frozenset({3}),  # only LR starts in the swing layout
    speed_range=(0.1, 0.7),
)

TROT = GaitScheduleConfig(
    name="trot",
    duty_factor=(0.6, 0.6, 0.6, 0.6),
    initial_phase=(0.9, 0.0, 0.0, 0.9),
    stance_law=(-0.15, 0.325),
    initial_swing=frozenset({0, 3}),  # RF and LR
    speed_range=(0.5, 1.5),
)

BOUNCE = GaitScheduleConfig(
    name="bounce",
    duty_factor=(0.35, 0.35, 0.35, 0.35),
    initial_phase=(0.0, 0.0, 0.0, 0.0),
    stance_law=(0.0, 0.04),
    initial_swing=frozenset(),
    speed_range=(1.0, 2.0),
)

GAITS = {g.name: g for g in (WALK, TROT, BOUNCE)}


def stance_duration(cfg: GaitScheduleConfig, v_target: float) -> float:
    a, b = cfg.stance_law
    duration = a * v_target + b
    if duration <= 0.0:
        raise ValueError(
            f"{cfg.name}: stance duration {duration:.3f}s <= 0 at v={v_target}")
    return duration


def cycle_period(cfg: GaitScheduleConfig, v_target: float) -> float:
    return stance_duration(cfg, v_target) / cfg.duty_factor[0]


def _raw_phases(cfg: GaitScheduleConfig, v_target: float, t: float) -> np.ndarray:
    period = cycle_period(cfg, v_target)
    return np.mod(t / period + np.asarray(cfg.initial_phase), 1.0)


def normalized_phases(cfg: GaitScheduleConfig, v_target: float, t: float) -> np.ndarray:
    """Phase measured from the most recent touchdown, in [0, 1)."""
    ph = _raw_phases(cfg, v_target, t)
    out = np.empty(N_LEGS)
    for i in range(N_LEGS):
        if i in cfg.initial_swing:
            out[i] = np.mod(ph[i] - (1.0 - cfg.duty_factor[i]), 1.0)
        else:
            out[i] = ph[i]
    return out


def schedule_tick(cfg: GaitScheduleConfig, v_target: float, t: float) -> np.ndarray:
    """Boolean stance mask for the 4 legs at time t."""
    if t < 0:
        raise ValueError("t must be >= 0")
    duty = np.asarray(cfg.duty_factor)
    return normalized_phases(cfg, v_target, t) < duty


@dataclass
class GaitPhaseState:
    phase: np.ndarray  # (4,) normalized phase since touchdown
    stance: np.ndarray  # (4,) bool
    cycle_period: float

    @classmethod
    def at(cls, cfg: GaitScheduleConfig, v_target: float, t: float) -> "GaitPhaseState":
        ph = normalized_phases(cfg, v_target, t)
        return cls(phase=ph, stance=ph < np.asarray(cfg.duty_factor),
                   cycle_period=cycle_period(cfg, v_target))

    def swing_progress(self, cfg: GaitScheduleConfig) -> np.ndarray:
        """(4,) progress through the swing window, 0 at liftoff, 1 at touchdown."""
        duty = np.asarray(cfg.duty_factor)
        return np.clip((self.phase - duty) / np.maximum(1.0 - duty, 1e-9), 0.0, 1.0)
