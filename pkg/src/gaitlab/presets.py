"""Named experiment presets and config (de)serialization.

A run directory always receives the exact config used (config.yaml), so any
result is reproducible from the directory contents alone.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from .adaptation import AdaptationConfig
from .distill import DistillConfig
from .env import EnvConfig, LocomotionEnv, RewardConfig
from .ppo import TrainConfig
from .randomize import PROFILES, PerturbationProfile
from .terrain import FractalParams


@dataclass
class ExperimentConfig:
    name: str
    seed: int = 0
    v_target: float = 0.375
    alpha_energy: float = 0.04
    alpha_forward: float = 20.0
    alive_coef: float = 20.0
    profile: str = "normal"
    terrain: dict = field(default_factory=lambda: dict(
        octaves=2, lacunarity=2.0, gain=0.25, base_frequency=2.0,
        amplitude=0.03))
    terrain_extent: tuple[float, float] = (12.0, 4.0)
    terrain_origin: tuple[float, float] = (-2.0, -2.0)
    episode_steps: int = 1000
    iterations: int = 400
    n_envs: int = 8
    horizon: int = 512
    phase2: bool = False
    phase2_rounds: int = 6
    distill: bool = False
    distill_epochs: int = 500
    out_dir: str = "runs"

    def reward_config(self) -> RewardConfig:
        return RewardConfig(v_target=self.v_target,
                            alpha_energy=self.alpha_energy,
                            alpha_forward=self.alpha_forward,
                            alive_coef=self.alive_coef)

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            reward=self.reward_config(),
            terrain_params=FractalParams(**self.terrain),
            terrain_extent=tuple(self.terrain_extent),
            terrain_origin=tuple(self.terrain_origin),
            profile=self.profile,
            episode_steps=self.episode_steps,
        )

    def env_factory(self, run_seed: int | None = None):
        seed = self.seed if run_seed is None else run_seed
        cfg = self.env_config()

        def factory(i: int) -> LocomotionEnv:
            return LocomotionEnv(cfg, seed=seed * 131 + 1000 + i)

        return factory

    def train_config(self) -> TrainConfig:
        return TrainConfig(iterations=self.iterations, n_envs=self.n_envs,
                           horizon=self.horizon, seed=self.seed)

    def adaptation_config(self) -> AdaptationConfig:
        return AdaptationConfig(rounds=self.phase2_rounds, n_envs=self.n_envs,
                                seed=self.seed)

    def to_yaml(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(asdict(self), f, sort_keys=True)

    @classmethod
    def from_yaml(cls, path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as f:
            try:
                raw = yaml.safe_load(f)
            except yaml.YAMLError as e:
                mark = getattr(e, "problem_mark", None)
                line = f" (line {mark.line + 1})" if mark else ""
                raise ValueError(f"{path}: invalid YAML{line}: {e}") from e
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a mapping")
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"{path}: unknown config fields {sorted(unknown)}")
        if "name" not in raw:
            raise ValueError(f"{path}: config needs a 'name'")
        cfg = cls(**raw)
        if cfg.profile not in PROFILES:
            raise ValueError(f"{path}: unknown profile {cfg.profile!r} "
                             f"(choose from {sorted(PROFILES)})")
        return cfg


def _desk(name: str, v: float, **kw) -> ExperimentConfig:
    return ExperimentConfig(name=name, v_target=v, profile="desk-normal", **kw)


PRESETS: dict[str, ExperimentConfig] = {
    # the three expert speeds at desk scale on a gentle fractal field
    "walk-desk": _desk("walk-desk", 0.375),
    "trot-desk": _desk("trot-desk", 0.9, terrain_extent=(16.0, 4.0)),
    "bounce-desk": _desk("bounce-desk", 1.5, terrain_extent=(22.0, 4.0)),
    # aggressive perturbations on the sharp published terrain
    "uneven-aggressive": ExperimentConfig(
        name="uneven-aggressive", v_target=0.375, profile="aggressive",
        terrain=dict(octaves=2, lacunarity=2.0, gain=0.25,
                     base_frequency=20.0, amplitude=0.27)),
    # velocity-conditioned distillation pipeline
    "transition-desk": ExperimentConfig(
        name="transition-desk", v_target=0.9, distill=True,
        terrain_extent=(22.0, 4.0)),
}


def load_config(source: str) -> ExperimentConfig:
    """Preset name or path to a YAML config."""
    if source in PRESETS:
        return replace(PRESETS[source])
    if os.path.exists(source):
        return ExperimentConfig.from_yaml(source)
    raise ValueError(f"{source!r} is neither a preset ({sorted(PRESETS)}) "
                     f"nor a config file")
