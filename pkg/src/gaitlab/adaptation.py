"""Supervised training of the history-based adaptation module (phase 2).

The base policy and factor encoder stay frozen. Rollouts run on-policy with
the policy consuming z_hat from the current adaptation module, and the module
regresses z_hat onto z = encoder(e_t). Windows at episode starts are
zero-padded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .nets import (ACT_DIM, EXTRINSICS_DIM, HISTORY_STEPS, OBS_DIM,
                   AdaptationModule, EnvEncoder, PolicyNet)
from .ppo import scale_obs
from .randomize import scale_factors


@dataclass
class AdaptationConfig:
    rounds: int = 6
    steps_per_round: int = 4000  # transitions per collection round
    n_envs: int = 8
    epochs: int = 8
    batch_size: int = 512
    lr: float = 1e-3
    val_fraction: float = 0.1
    patience: int = 2  # rounds without >1% val improvement
    seed: int = 0


class HistoryBuffer:
    """Per-environment rolling window of scaled observations and actions."""

    def __init__(self):
        self.obs = np.zeros((HISTORY_STEPS + 1, OBS_DIM))
        self.act = np.zeros((HISTORY_STEPS + 2, ACT_DIM))

    def reset(self):
        self.obs[:] = 0.0
        self.act[:] = 0.0

    def push(self, obs: np.ndarray, action: np.ndarray):
        self.obs = np.roll(self.obs, 1, axis=0)
        self.obs[0] = obs
        self.act = np.roll(self.act, 1, axis=0)
        self.act[0] = action

    def window(self) -> np.ndarray:
        """x_{t-1}..x_{t-20} and a_{t-2}..a_{t-21} as one flat vector."""
        return np.concatenate([self.obs[0:HISTORY_STEPS].ravel(),
                               self.act[1:HISTORY_STEPS + 1].ravel()])


@torch.no_grad()
def _act(policy: PolicyNet, obs_s: np.ndarray, prev_a: np.ndarray,
         z_hat: np.ndarray) -> np.ndarray:
    x = torch.from_numpy(
        np.concatenate([obs_s, prev_a, z_hat])[None]).float()
    return policy(x)[0].numpy()


def train_phase2(policy: PolicyNet, encoder: EnvEncoder, env_factory,
                 cfg: AdaptationConfig | None = None, quiet: bool = False):
    """Returns (module, stats) where stats carries the validation MSE series
    and the mean-predictor baseline for comparison."""
    cfg = cfg or AdaptationConfig()
    torch.manual_seed(cfg.seed + 17)
    module = AdaptationModule()
    opt = torch.optim.Adam(module.parameters(), lr=cfg.lr)
    envs = [env_factory(i) for i in range(cfg.n_envs)]
    buffers = [HistoryBuffer() for _ in envs]
    nominal_q = envs[0].model.nominal_stand_q
    obs = [scale_obs(env.reset(seed=cfg.seed + 101 * (i + 1)), nominal_q)
           for i, env in enumerate(envs)]
    prev_a = np.zeros((cfg.n_envs, ACT_DIM))
    reset_seed = cfg.seed + 900_000

    all_x: list[np.ndarray] = []
    all_z: list[np.ndarray] = []
    val_history: list[float] = []
    best = float("inf")
    stale = 0
    rng = np.random.default_rng(cfg.seed + 3)

    for rnd in range(cfg.rounds):
        steps = cfg.steps_per_round // cfg.n_envs
        for _ in range(steps):
            for i, env in enumerate(envs):
                window = buffers[i].window()
                with torch.no_grad():
                    z_hat = module(torch.from_numpy(window[None]).float())[0].numpy()
                    z_true = encoder(torch.from_numpy(
                        scale_factors(env.factor_vector())[None]).float())[0].numpy()
                all_x.append(window)
                all_z.append(z_true)
                action = _act(policy, obs[i], prev_a[i], z_hat)
                new_obs, _, done, info = env.step(action)
                buffers[i].push(obs[i], action)
                prev_a[i] = action
                if done:
                    reset_seed += 1
                    new_obs = env.reset(seed=reset_seed)
                    buffers[i].reset()
                    prev_a[i] = 0.0
                obs[i] = scale_obs(new_obs, nominal_q)

        X = torch.from_numpy(np.stack(all_x)).float()
        Z = torch.from_numpy(np.stack(all_z)).float()
        n_val = max(1, int(len(X) * cfg.val_fraction))
        perm = rng.permutation(len(X))
        val_idx = torch.from_numpy(perm[:n_val])
        tr_idx = torch.from_numpy(perm[n_val:])
        for _ in range(cfg.epochs):
            order = torch.from_numpy(rng.permutation(len(tr_idx)))
            for s in range(0, len(tr_idx), cfg.batch_size):
                sel = tr_idx[order[s:s + cfg.batch_size]]
                pred = module(X[sel])
                loss = torch.mean((pred - Z[sel]) ** 2)
                opt.zero_grad()
                loss.backward()
                opt.step()
        with torch.no_grad():
            val_mse = float(torch.mean((module(X[val_idx]) - Z[val_idx]) ** 2))
            mean_pred = Z[tr_idx].mean(dim=0)
            baseline_mse = float(torch.mean((Z[val_idx] - mean_pred) ** 2))
        val_history.append(val_mse)
        if not quiet:
            print(f"[phase2 round {rnd}] val_mse={val_mse:.5f} "
                  f"baseline={baseline_mse:.5f} n={len(X)}")
        if val_mse < best * 0.99:
            best = val_mse
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break

    stats = {
        "val_mse": val_history[-1],
        "val_history": val_history,
        "baseline_mse": baseline_mse,
        "improvement": 1.0 - val_history[-1] / baseline_mse,
        "samples": len(all_x),
    }
    return module, stats
