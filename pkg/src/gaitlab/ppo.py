"""PPO with an environment-factor encoder (phase 1 of the two-phase scheme).

The policy and critic consume the scaled observation, the previous action,
and the extrinsics vector z = encoder(e_t); encoder gradients flow through
the PPO losses. Returns are normalized for the critic with running
statistics so the value clip operates on a sane scale regardless of the
discount horizon.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .env import LocomotionEnv
from .nets import (ACT_DIM, EXTRINSICS_DIM, OBS_DIM, EnvEncoder, PolicyNet,
                   ValueNet)
from .randomize import scale_factors

QD_SCALE = 0.1  # joint-velocity input conditioning


@dataclass
class TrainConfig:
    iterations: int = 15000
    n_envs: int = 400
    horizon: int = 250  # batch = n_envs * horizon transitions
    minibatches: int = 4
    epochs: int = 4  # passes per minibatch
    lr: float = 5e-4
    critic_lr: float = 1.5e-3  # critic-only rate; the paper leaves the critic open
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    clip_ratio: float = 0.2  # ratio clipped to [0.8, 1.2]
    value_clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    gae_lambda: float = 0.95
    gamma: float = 0.998
    seed: int = 0
    checkpoint_every: int = 0  # 0: only initial + final

    def __post_init__(self):
        for name in ("iterations", "n_envs", "horizon", "minibatches",
                     "epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ValueError("invalid gamma/lambda")

    @property
    def batch_size(self) -> int:
        return self.n_envs * self.horizon


# full-scale configuration matching the published hyperparameters; not a
# desk-scale acceptance target
FULL_SCALE = TrainConfig(iterations=15000, n_envs=400, horizon=250)

DESK = TrainConfig(iterations=400, n_envs=8, horizon=512, seed=0)


def scale_obs(obs: np.ndarray, nominal_q: np.ndarray) -> np.ndarray:
    out = obs.copy()
    out[0:12] -= nominal_q
    out[12:24] *= QD_SCALE
    return out


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                next_values: np.ndarray, gamma: float, lam: float):
    """Generalized advantage estimation over (T, N) arrays.

    ``next_values[t]`` is V of the successor state actually used for step t:
    V(s_{t+1}) for ordinary steps, the bootstrap value at truncations, and 0
    at true terminations. The recursion stops across episode boundaries.
    """
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1])
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_values[t] - values[t]
        running = delta + gamma * lam * (1.0 - dones[t]) * running
        adv[t] = running
    return adv, adv + values


class ReturnNormalizer:
    """Running mean/std of returns for critic conditioning."""

    def __init__(self, momentum: float = 0.95):
        self.momentum = momentum
        self.mean = 0.0
        self.var = 1.0
        self.initialized = False

    def update(self, returns: np.ndarray) -> None:
        m, v = float(returns.mean()), float(returns.var() + 1e-8)
        if not self.initialized:
            self.mean, self.var = m, v
            self.initialized = True
        else:
            a = self.momentum
            self.mean = a * self.mean + (1 - a) * m
            self.var = a * self.var + (1 - a) * v

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, x):
        return x * self.std + self.mean

    def state(self) -> dict:
        return {"mean": self.mean, "var": self.var,
                "initialized": self.initialized}

    def load(self, state: dict) -> None:
        self.mean = state["mean"]
        self.var = state["var"]
        self.initialized = state["initialized"]


@dataclass
class RolloutBatch:
    obs_part: np.ndarray  # (B, 42) scaled obs + previous action
    factors: np.ndarray  # (B, 19) scaled environment factors
    actions: np.ndarray  # (B, 12)
    log_probs: np.ndarray  # (B,)
    values: np.ndarray  # (B,) raw scale
    advantages: np.ndarray  # (B,) normalized
    returns: np.ndarray  # (B,) raw scale
    stats: dict = field(default_factory=dict)


class RolloutCollector:
    """Steps N owned environments and assembles PPO batches."""

    def __init__(self, envs: list[LocomotionEnv], policy: PolicyNet,
                 value_net: ValueNet, encoder: EnvEncoder, cfg: TrainConfig,
                 value_norm: ReturnNormalizer | None = None,
                 device: str = "cpu"):
        self.envs = envs
        self.policy = policy
        self.value_net = value_net
        self.encoder = encoder
        self.cfg = cfg
        # the critic predicts in normalized units; rollouts must denormalize
        self.value_norm = value_norm or ReturnNormalizer()
        self.device = device
        self.gen = torch.Generator(device).manual_seed(cfg.seed + 7919)
        self.nominal_q = envs[0].model.nominal_stand_q
        self.obs = [scale_obs(env.reset(seed=cfg.seed + 1000 * i), self.nominal_q)
                    for i, env in enumerate(self.envs)]
        self.prev_action = np.zeros((len(envs), ACT_DIM))
        self.factors = np.stack([scale_factors(env.factor_vector())
                                 for env in envs])
        self.ep_return = np.zeros(len(envs))
        self.ep_len = np.zeros(len(envs), dtype=int)
        self.ep_x0 = np.array([float(env.state.base_position[0]) for env in envs])
        self.episode_stats: list[dict] = []
        self._reset_seed = cfg.seed + 54321

    def _policy_inputs(self) -> tuple[np.ndarray, np.ndarray]:
        obs_part = np.concatenate([np.stack(self.obs), self.prev_action], axis=1)
        return obs_part, self.factors

    @torch.no_grad()
    def collect(self, horizon: int) -> RolloutBatch:
        N = len(self.envs)
        cfg = self.cfg
        obs_parts = np.empty((horizon, N, OBS_DIM + ACT_DIM))
        factors = np.empty((horizon, N, self.factors.shape[1]))
        actions = np.empty((horizon, N, ACT_DIM))
        log_probs = np.empty((horizon, N))
        values = np.empty((horizon, N))
        rewards = np.empty((horizon, N))
        dones = np.zeros((horizon, N))
        next_values = np.zeros((horizon, N))
        tel = {k: 0.0 for k in ("power", "torque", "delta_torque", "foot_slip",
                                "joint_speed", "action_mag", "abs_qdot",
                                "contact_switch", "speed")}
        prev_tau = np.stack([env.state.tau_applied for env in self.envs])
        prev_contacts = np.stack([env.state.foot_contact for env in self.envs])

        self.episode_stats = []
        for t in range(horizon):
            obs_part, e = self._policy_inputs()
            x = torch.from_numpy(
                np.concatenate([obs_part, e], axis=1)).float()
            z = self.encoder(x[:, OBS_DIM + ACT_DIM:])
            inp = torch.cat([x[:, :OBS_DIM + ACT_DIM], z], dim=1)
            mean = self.policy(inp)
            std = self.policy.std()
            noise = torch.randn(mean.shape, generator=self.gen, device=self.device)
            act = mean + std * noise
            logp = torch.distributions.Normal(mean, std).log_prob(act).sum(-1)
            val = self.value_norm.denormalize(self.value_net(inp).numpy())

            obs_parts[t] = obs_part
            factors[t] = e
            actions[t] = act.numpy()
            log_probs[t] = logp.numpy()
            values[t] = val

            for i, env in enumerate(self.envs):
                obs, r, done, info = env.step(actions[t, i])
                rewards[t, i] = r
                self.ep_return[i] += r
                self.ep_len[i] += 1
                tel["power"] += info["power_raw"]
                tau = info["tau"]
                tel["torque"] += float(np.abs(tau).sum())
                tel["delta_torque"] += float(np.abs(tau - prev_tau[i]).sum())
                tel["joint_speed"] += float(np.sum(obs[12:24] ** 2))
                tel["action_mag"] += float(np.sum(actions[t, i] ** 2))
                tel["abs_qdot"] += float(np.abs(obs[12:24]).mean())
                contacts = env.state.foot_contact
                tel["contact_switch"] += float(np.sum(contacts != prev_contacts[i]))
                qd = env.state.q_dot.reshape(4, 3)
                feet_speed = np.abs(env.model.leg_jacobians_body(env.state.q)[:, 0, :]
                                    @ qd.T).diagonal()
                tel["foot_slip"] += float((feet_speed * contacts).sum())
                tel["speed"] += info["vx"]
                prev_tau[i] = tau
                prev_contacts[i] = contacts

                if done:
                    self.episode_stats.append({
                        "return": float(self.ep_return[i]),
                        "length": int(self.ep_len[i]),
                        "fell": bool(info["fell"]),
                        "mean_speed": (float(env.state.base_position[0]) - self.ep_x0[i])
                        / (self.ep_len[i] * 0.01),
                    })
                    if info["timeout"] and not info["fell"]:
                        final_obs = scale_obs(obs, self.nominal_q)
                        fin = np.concatenate([final_obs, actions[t, i],
                                              scale_factors(env.factor_vector())])
                        xt = torch.from_numpy(fin[None]).float()
                        zt = self.encoder(xt[:, OBS_DIM + ACT_DIM:])
                        it = torch.cat([xt[:, :OBS_DIM + ACT_DIM], zt], 1)
                        next_values[t, i] = self.value_norm.denormalize(
                            float(self.value_net(it)))
                    dones[t, i] = 1.0
                    self._reset_seed += 1
                    obs = env.reset(seed=self._reset_seed)
                    self.prev_action[i] = 0.0
                    self.ep_return[i] = 0.0
                    self.ep_len[i] = 0
                    self.ep_x0[i] = float(env.state.base_position[0])
                else:
                    self.prev_action[i] = actions[t, i]
                self.obs[i] = scale_obs(obs, self.nominal_q)
                self.factors[i] = scale_factors(env.factor_vector())

            if t == horizon - 1:
                obs_part, e = self._policy_inputs()
                x = torch.from_numpy(np.concatenate([obs_part, e], axis=1)).float()
                z = self.encoder(x[:, OBS_DIM + ACT_DIM:])
                inp = torch.cat([x[:, :OBS_DIM + ACT_DIM], z], dim=1)
                boot = self.value_norm.denormalize(self.value_net(inp).numpy())
                live = dones[t] == 0.0
                next_values[t, live] = boot[live]
            # mid-rollout rows inherit the next row's value
        for t in range(horizon - 2, -1, -1):
            live = dones[t] == 0.0
            next_values[t, live] = values[t + 1, live]

        adv, rets = compute_gae(rewards, values, dones, next_values,
                                cfg.gamma, cfg.gae_lambda)
        B = horizon * len(self.envs)
        adv_flat = adv.reshape(B)
        adv_norm = (adv_flat - adv_flat.mean()) / (adv_flat.std() + 1e-8)
        steps = horizon * len(self.envs)
        stats = {k: v / steps for k, v in tel.items()}
        stats["episodes"] = self.episode_stats
        return RolloutBatch(
            obs_part=obs_parts.reshape(B, -1),
            factors=factors.reshape(B, -1),
            actions=actions.reshape(B, ACT_DIM),
            log_probs=log_probs.reshape(B),
            values=values.reshape(B),
            advantages=adv_norm,
            returns=rets.reshape(B),
            stats=stats,
        )


@dataclass
class TrainStats:
    policy_loss: float
    value_loss: float
    kl: float
    explained_variance: float
    std_mean: float
    skipped: bool = False


def ppo_update(policy: PolicyNet, value_net: ValueNet, encoder: EnvEncoder,
               optimizer: torch.optim.Optimizer, batch: RolloutBatch,
               cfg: TrainConfig, value_norm: ReturnNormalizer,
               perm_gen: torch.Generator) -> TrainStats:
    """4 passes over 4 fixed minibatches with clipped surrogate and clipped
    (normalized) value loss; std floor re-projected after every step."""
    device = next(policy.parameters()).device
    obs_part = torch.from_numpy(batch.obs_part).float().to(device)
    factors = torch.from_numpy(batch.factors).float().to(device)
    actions = torch.from_numpy(batch.actions).float().to(device)
    old_logp = torch.from_numpy(batch.log_probs).float().to(device)
    advantages = torch.from_numpy(batch.advantages).float().to(device)
    value_norm.update(batch.returns)
    returns_n = torch.from_numpy(
        value_norm.normalize(batch.returns)).float().to(device)
    old_values_n = torch.from_numpy(
        value_norm.normalize(batch.values)).float().to(device)

    B = obs_part.shape[0]
    idx = torch.randperm(B, generator=perm_gen, device=device)
    mb_size = B // cfg.minibatches
    kls, plosses, vlosses = [], [], []
    skipped = False
    for _ in range(cfg.epochs):
        for m in range(cfg.minibatches):
            sel = idx[m * mb_size:(m + 1) * mb_size]
            z = encoder(factors[sel])
            inp = torch.cat([obs_part[sel], z], dim=1)
            dist = policy.distribution(inp)
            logp = dist.log_prob(actions[sel]).sum(-1)
            ratio = torch.exp(logp - old_logp[sel])
            clipped = torch.clamp(ratio, 1.0 - cfg.clip_ratio,
                                  1.0 + cfg.clip_ratio)
            pg = -torch.min(ratio * advantages[sel],
                            clipped * advantages[sel]).mean()
            v = value_net(inp)
            v_clip = old_values_n[sel] + torch.clamp(
                v - old_values_n[sel], -cfg.value_clip, cfg.value_clip)
            v_loss = torch.max((v - returns_n[sel]) ** 2,
                               (v_clip - returns_n[sel]) ** 2).mean()
            loss = pg + cfg.value_coef * v_loss
            if cfg.entropy_coef:
                loss = loss - cfg.entropy_coef * dist.entropy().sum(-1).mean()
            if not torch.isfinite(loss):
                skipped = True
                continue
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            policy.project_std()
            with torch.no_grad():
                kls.append(float((old_logp[sel] - logp).mean()))
            plosses.append(float(pg.detach()))
            vlosses.append(float(v_loss.detach()))

    with torch.no_grad():
        z = encoder(factors)
        v_all = value_norm.denormalize(
            value_net(torch.cat([obs_part, z], 1)).numpy())
    var_r = np.var(batch.returns)
    ev = float(1.0 - np.var(batch.returns - v_all) / (var_r + 1e-8))
    return TrainStats(
        policy_loss=float(np.mean(plosses)) if plosses else float("nan"),
        value_loss=float(np.mean(vlosses)) if vlosses else float("nan"),
        kl=float(np.mean(kls)) if kls else float("nan"),
        explained_variance=ev,
        std_mean=float(policy.std().mean().detach()),
        skipped=skipped,
    )


# telemetry stays wall-clock-free so reruns of the same config and seed
# produce byte-identical files
TELEMETRY_FIELDS = [
    "iteration", "mean_return", "mean_ep_len", "mean_speed", "fall_rate",
    "energy", "torque", "delta_torque", "foot_slip", "joint_speed",
    "action_mag", "abs_qdot", "contact_switch", "policy_loss", "value_loss",
    "kl", "explained_variance", "std_mean", "episodes",
]


def train_phase1(env_factory, cfg: TrainConfig, telemetry_path: str | None = None,
                 checkpoint_fn=None, log_every: int = 10, quiet: bool = False):
    """Alternate rollout collection and PPO updates to the iteration budget.

    ``env_factory(i)`` builds environment i. ``checkpoint_fn(tag, modules,
    extra_meta)`` is called at start, at the end, and every
    ``cfg.checkpoint_every`` iterations when set. Returns (policy, encoder,
    value_net, telemetry rows).
    """
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(1)
    policy = PolicyNet()
    value_net = ValueNet()
    encoder = EnvEncoder()
    optimizer = torch.optim.Adam(
        [{"params": list(policy.parameters()) + list(encoder.parameters())},
         {"params": list(value_net.parameters()), "lr": cfg.critic_lr}],
        lr=cfg.lr, betas=cfg.adam_betas, eps=cfg.adam_eps)
    envs = [env_factory(i) for i in range(cfg.n_envs)]
    value_norm = ReturnNormalizer()
    collector = RolloutCollector(envs, policy, value_net, encoder, cfg,
                                 value_norm)
    perm_gen = torch.Generator().manual_seed(cfg.seed + 31337)

    if checkpoint_fn:
        checkpoint_fn("initial", _modules(policy, value_net, encoder),
                      {"iteration": 0, "value_norm": value_norm.state()})

    telemetry: list[dict] = []
    last_return = float("nan")
    t_start = time.monotonic()
    for it in range(cfg.iterations):
        batch = collector.collect(cfg.horizon)
        stats = ppo_update(policy, value_net, encoder, optimizer, batch, cfg,
                           value_norm, perm_gen)
        eps = batch.stats["episodes"]
        if eps:
            last_return = float(np.mean([e["return"] for e in eps]))
        row = {
            "iteration": it,
            "mean_return": last_return,
            "mean_ep_len": float(np.mean([e["length"] for e in eps])) if eps else float("nan"),
            "mean_speed": batch.stats["speed"],
            "fall_rate": float(np.mean([e["fell"] for e in eps])) if eps else float("nan"),
            "energy": batch.stats["power"],
            "torque": batch.stats["torque"],
            "delta_torque": batch.stats["delta_torque"],
            "foot_slip": batch.stats["foot_slip"],
            "joint_speed": batch.stats["joint_speed"],
            "action_mag": batch.stats["action_mag"],
            "abs_qdot": batch.stats["abs_qdot"],
            "contact_switch": batch.stats["contact_switch"],
            "policy_loss": stats.policy_loss,
            "value_loss": stats.value_loss,
            "kl": stats.kl,
            "explained_variance": stats.explained_variance,
            "std_mean": stats.std_mean,
            "episodes": len(eps),
        }
        telemetry.append(row)
        if not quiet and (it % log_every == 0 or it == cfg.iterations - 1):
            print(f"[{it:5d}] return={row['mean_return']:9.1f} "
                  f"speed={row['mean_speed']:+.3f} energy={row['energy']:7.1f} "
                  f"std={row['std_mean']:.2f} ev={row['explained_variance']:+.2f} "
                  f"({time.monotonic() - t_start:.0f}s)")
        if checkpoint_fn and cfg.checkpoint_every \
                and (it + 1) % cfg.checkpoint_every == 0:
            checkpoint_fn(f"iter{it + 1:06d}", _modules(policy, value_net, encoder),
                          {"iteration": it + 1, "value_norm": value_norm.state()})

    if telemetry_path:
        write_telemetry(telemetry_path, telemetry)
    if checkpoint_fn:
        checkpoint_fn("final", _modules(policy, value_net, encoder),
                      {"iteration": cfg.iterations,
                       "value_norm": value_norm.state()})
    return policy, encoder, value_net, telemetry


def _modules(policy, value_net, encoder):
    return {"policy": policy, "value": value_net, "encoder": encoder}


def write_telemetry(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=TELEMETRY_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v)
                        for k, v in row.items()})


@torch.no_grad()
def evaluate_policy(policy: PolicyNet, encoder: EnvEncoder, env_factory,
                    episodes: int = 20, base_seed: int = 10_000,
                    deterministic: bool = True, max_steps: int | None = None):
    """Roll out evaluation episodes (mean action by default).

    Returns one dict per episode: return, steps, mean_speed (displacement
    over time, the distance/time protocol), fell.
    """
    env = env_factory(0)
    nominal_q = env.model.nominal_stand_q
    results = []
    for ep in range(episodes):
        obs = env.reset(seed=base_seed + ep)
        prev_a = np.zeros(ACT_DIM)
        x0 = float(env.state.base_position[0])
        total = 0.0
        steps = 0
        gen = torch.Generator().manual_seed(base_seed + ep)
        fell = False
        limit = max_steps or env.config.episode_steps
        for _ in range(limit):
            e = scale_factors(env.factor_vector())
            inp = np.concatenate([scale_obs(obs, nominal_q), prev_a, e])
            xt = torch.from_numpy(inp[None]).float()
            z = encoder(xt[:, OBS_DIM + ACT_DIM:])
            mean = policy(torch.cat([xt[:, :OBS_DIM + ACT_DIM], z], 1))
            if deterministic:
                act = mean[0].numpy()
            else:
                std = policy.std()
                act = (mean + std * torch.randn(mean.shape, generator=gen))[0].numpy()
            obs, r, done, info = env.step(act)
            prev_a = act
            total += r
            steps += 1
            if done:
                fell = bool(info["fell"])
                break
        dist = float(env.state.base_position[0]) - x0
        results.append({
            "return": total,
            "steps": steps,
            "mean_speed": dist / (steps * 0.01) if steps else 0.0,
            "fell": fell,
        })
    return results
