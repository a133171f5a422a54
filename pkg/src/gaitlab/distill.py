"""Velocity-conditioned policy: annealed expert distillation plus RL.

Three fixed-speed experts (0.375 / 0.9 / 1.5 m/s) supervise the student at
their own speeds through an L2 loss on action means, annealed linearly to
zero over the first half of the epoch budget; interpolated speeds are learned
by the RL objective alone. The student cannot see the true environment
factors: it runs on z_hat from its own history-based adaptation module,
trained end to end with the rest of the student.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .env import LocomotionEnv
from .nets import (ACT_DIM, OBS_DIM, AdaptationModule, EnvEncoder, PolicyNet,
                   ValueNet)
from .adaptation import HistoryBuffer
from .ppo import (ReturnNormalizer, TrainConfig, compute_gae, scale_obs)
from .randomize import scale_factors

MODES = (0.375, 0.9, 1.5)
V_MIN, V_MAX = MODES[0], MODES[-1]

# Piecewise-linear code anchors. The two interior anchors reproduce the
# published example codes for 0.5 m/s and 1.2 m/s; codes are exactly one-hot
# at the modes and the map stays continuous and invertible in between.
_ANCHORS: list[tuple[float, np.ndarray]] = [
    (0.375, np.array([1.0, 0.0, 0.0])),
    (0.5, np.array([5.0 / 21.0, 16.0 / 21.0, 0.0])),
    (0.9, np.array([0.0, 1.0, 0.0])),
    (1.2, np.array([0.0, 0.5, 0.5])),
    (1.5, np.array([0.0, 0.0, 1.0])),
]


def encode_velocity(v: float) -> np.ndarray:
    """Velocity command -> 3-dim mode-weight code (sums to one)."""
    if not V_MIN <= v <= V_MAX:
        raise ValueError(f"velocity {v} outside [{V_MIN}, {V_MAX}]")
    for (va, ca), (vb, cb) in zip(_ANCHORS, _ANCHORS[1:]):
        if va <= v <= vb:
            t = (v - va) / (vb - va)
            return (1.0 - t) * ca + t * cb
    raise AssertionError("unreachable")


def decode_velocity(code: np.ndarray) -> float:
    """Inverse of encode_velocity for codes on the encoding curve."""
    code = np.asarray(code, dtype=np.float64)
    if code.shape != (3,) or abs(code.sum() - 1.0) > 1e-6 or np.any(code < -1e-9):
        raise ValueError(f"not a velocity code: {code}")
    for (va, ca), (vb, cb) in zip(_ANCHORS, _ANCHORS[1:]):
        d = cb - ca
        k = int(np.argmax(np.abs(d)))
        t = (code[k] - ca[k]) / d[k]
        if -1e-9 <= t <= 1.0 + 1e-9:
            cand = np.clip(t, 0.0, 1.0)
            if np.allclose((1 - cand) * ca + cand * cb, code, atol=1e-6):
                return float(va + cand * (vb - va))
    raise ValueError(f"code {code} is not on the encoding curve")


def distill_weight(epoch: int, total_epochs: int) -> float:
    """Linear 1 -> 0 over the first half of the budget, 0 afterwards."""
    half = total_epochs / 2.0
    return max(0.0, 1.0 - epoch / half)


@dataclass
class DistillConfig:
    epochs: int = 500  # mirrors the full-scale 2 x 2500 split at desk scale
    n_envs: int = 8
    horizon: int = 256
    resample_every: int = 200  # control steps between velocity resamples
    mode_prob: float = 0.25  # chance a resample lands exactly on a mode
    distill_coef: float = 1.0
    lr: float = 5e-4
    seed: int = 0
    on_policy_distill: bool = True  # False: supervise on expert-visited states
    ppo: TrainConfig = field(default_factory=lambda: TrainConfig(
        iterations=1, n_envs=8, horizon=256))


@dataclass
class ConditionedPolicyBundle:
    policy: PolicyNet  # extra_dims=3 (velocity code)
    adaptation: AdaptationModule
    value: ValueNet | None = None

    @torch.no_grad()
    def act(self, obs_scaled: np.ndarray, prev_action: np.ndarray,
            window: np.ndarray, code: np.ndarray) -> np.ndarray:
        z_hat = self.adaptation(torch.from_numpy(window[None]).float())
        x = torch.cat([torch.from_numpy(
            np.concatenate([obs_scaled, prev_action])[None]).float(),
            z_hat, torch.from_numpy(code[None]).float()], dim=1)
        return self.policy(x)[0].numpy()


class _Expert:
    def __init__(self, policy: PolicyNet, encoder: EnvEncoder):
        self.policy = policy
        self.encoder = encoder
        for p in self.policy.parameters():
            p.requires_grad_(False)
        for p in self.encoder.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def mean_action(self, obs_part: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        z = self.encoder(e)
        return self.policy(torch.cat([obs_part, z], dim=1))


@torch.no_grad()
def collect_expert_states(expert: _Expert, env_factory, v_mode: float,
                          steps: int = 1000, seed: int = 0):
    """Expert-visited states for off-policy distillation: per step the
    (obs+prev action, history window, scaled factors) triple."""
    env = env_factory(0)
    env.set_v_target(v_mode)
    nominal_q = env.model.nominal_stand_q
    obs = scale_obs(env.reset(seed=seed), nominal_q)
    buffer = HistoryBuffer()
    prev_a = np.zeros(ACT_DIM)
    rows = {"obs_part": [], "window": [], "factors": []}
    for k in range(steps):
        e = scale_factors(env.factor_vector())
        obs_part = np.concatenate([obs, prev_a])
        rows["obs_part"].append(obs_part)
        rows["window"].append(buffer.window())
        rows["factors"].append(e)
        action = expert.mean_action(
            torch.from_numpy(obs_part[None]).float(),
            torch.from_numpy(e[None]).float())[0].numpy()
        new_obs, _, done, _ = env.step(action)
        buffer.push(obs, action)
        prev_a = action
        if done:
            new_obs = env.reset(seed=seed + 1000 + k)
            env.set_v_target(v_mode)
            buffer.reset()
            prev_a = np.zeros(ACT_DIM)
        obs = scale_obs(new_obs, nominal_q)
    return {k: np.stack(v) for k, v in rows.items()}


def _distill_loss_on_policy(student, adaptation, experts_w, obs_b, win_b,
                            code_b, fac_b, sel, mmask_b):
    """L2 to the experts on student-visited states at the mode velocities."""
    msel = sel[mmask_b[sel]]
    if len(msel) == 0:
        return None
    z_hat_m = adaptation(win_b[msel])
    inp_m = torch.cat([obs_b[msel], z_hat_m, code_b[msel]], 1)
    student_mean = student(inp_m)
    targets = torch.empty_like(student_mean)
    codes_m = code_b[msel]
    for k, mode in enumerate(MODES):
        onehot = torch.zeros(3)
        onehot[k] = 1.0
        pick = (codes_m - onehot).abs().sum(1) < 1e-9
        if pick.any():
            targets[pick] = experts_w[mode].mean_action(
                obs_b[msel][pick], fac_b[msel][pick])
    return torch.mean((student_mean - targets) ** 2)


def _distill_loss_expert_states(student, adaptation, experts_w, expert_sets,
                                batch_size, gen):
    """L2 to the experts on pre-collected expert-visited states."""
    losses = []
    for mode, data in expert_sets.items():
        n = len(data["obs_part"])
        sel = torch.randint(0, n, (min(batch_size, n),), generator=gen)
        z_hat = adaptation(data["window"][sel])
        inp = torch.cat([data["obs_part"][sel], z_hat, data["code"][sel]], 1)
        target = experts_w[mode].mean_action(data["obs_part"][sel],
                                             data["factors"][sel])
        losses.append(torch.mean((student(inp) - target) ** 2))
    return torch.stack(losses).mean()


def train_conditioned(experts: dict[float, tuple[PolicyNet, EnvEncoder]],
                      env_factory, cfg: DistillConfig | None = None,
                      quiet: bool = False):
    """Train the velocity-conditioned student. ``experts`` maps each mode
    speed to its frozen (policy, encoder) pair; all three modes are required.

    Returns (bundle, telemetry rows).
    """
    cfg = cfg or DistillConfig()
    missing = [m for m in MODES if m not in experts]
    if missing:
        raise ValueError(f"missing expert checkpoints for modes {missing}")
    torch.manual_seed(cfg.seed + 71)
    torch.set_num_threads(1)
    experts_w = {v: _Expert(p, e) for v, (p, e) in experts.items()}

    student = PolicyNet(extra_dims=3)
    value_net = ValueNet(extra_dims=3)
    adaptation = AdaptationModule()
    params = (list(student.parameters()) + list(value_net.parameters())
              + list(adaptation.parameters()))
    optimizer = torch.optim.Adam(params, lr=cfg.lr)
    value_norm = ReturnNormalizer()
    perm_gen = torch.Generator().manual_seed(cfg.seed + 5)
    act_gen = torch.Generator().manual_seed(cfg.seed + 6)
    rng = np.random.default_rng(cfg.seed + 7)

    envs: list[LocomotionEnv] = [env_factory(i) for i in range(cfg.n_envs)]
    buffers = [HistoryBuffer() for _ in envs]
    nominal_q = envs[0].model.nominal_stand_q
    obs = [scale_obs(env.reset(seed=cfg.seed + 211 * (i + 1)), nominal_q)
           for i, env in enumerate(envs)]
    prev_a = np.zeros((cfg.n_envs, ACT_DIM))
    v_cmd = np.empty(cfg.n_envs)
    codes = np.empty((cfg.n_envs, 3))
    steps_since_resample = np.zeros(cfg.n_envs, dtype=int)
    reset_seed = cfg.seed + 770_000

    def sample_velocity() -> float:
        if rng.random() < cfg.mode_prob:
            return float(MODES[rng.integers(0, 3)])
        return float(rng.uniform(V_MIN, V_MAX))

    for i, env in enumerate(envs):
        v_cmd[i] = sample_velocity()
        codes[i] = encode_velocity(v_cmd[i])
        env.set_v_target(v_cmd[i])

    expert_sets = None
    if not cfg.on_policy_distill:
        expert_sets = {}
        for k, mode in enumerate(MODES):
            data = collect_expert_states(experts_w[mode], env_factory, mode,
                                         steps=cfg.horizon * 4,
                                         seed=cfg.seed + 40 + k)
            code = np.zeros(3)
            code[k] = 1.0
            expert_sets[mode] = {
                "obs_part": torch.from_numpy(data["obs_part"]).float(),
                "window": torch.from_numpy(data["window"]).float(),
                "factors": torch.from_numpy(data["factors"]).float(),
                "code": torch.from_numpy(np.tile(code, (len(data["obs_part"]), 1))).float(),
            }

    gamma, lam = cfg.ppo.gamma, cfg.ppo.gae_lambda
    telemetry = []
    for epoch in range(cfg.epochs):
        w = distill_weight(epoch, cfg.epochs)
        H, N = cfg.horizon, cfg.n_envs
        obs_parts = np.empty((H, N, OBS_DIM + ACT_DIM))
        windows = np.empty((H, N, AdaptationModule.IN_DIM))
        factor_rows = np.empty((H, N, 19))
        code_rows = np.empty((H, N, 3))
        mode_mask = np.zeros((H, N), dtype=bool)
        actions = np.empty((H, N, ACT_DIM))
        log_probs = np.empty((H, N))
        values = np.empty((H, N))
        rewards = np.empty((H, N))
        dones = np.zeros((H, N))
        next_values = np.zeros((H, N))
        speeds = []

        for t in range(H):
            window_np = np.stack([b.window() for b in buffers])
            obs_part = np.concatenate([np.stack(obs), prev_a], axis=1)
            with torch.no_grad():
                z_hat = adaptation(torch.from_numpy(window_np).float())
                inp = torch.cat([torch.from_numpy(obs_part).float(), z_hat,
                                 torch.from_numpy(codes).float()], dim=1)
                mean = student(inp)
                std = student.std()
                act = mean + std * torch.randn(mean.shape, generator=act_gen)
                logp = torch.distributions.Normal(mean, std).log_prob(act).sum(-1)
                val = value_norm.denormalize(value_net(inp).numpy())
            obs_parts[t] = obs_part
            windows[t] = window_np
            code_rows[t] = codes
            actions[t] = act.numpy()
            log_probs[t] = logp.numpy()
            values[t] = val

            for i, env in enumerate(envs):
                factor_rows[t, i] = scale_factors(env.factor_vector())
                mode_mask[t, i] = v_cmd[i] in MODES
                new_obs, r, done, info = env.step(actions[t, i])
                rewards[t, i] = r
                speeds.append(info["vx"])
                buffers[i].push(obs[i], actions[t, i])
                prev_a[i] = actions[t, i]
                steps_since_resample[i] += 1
                if done:
                    dones[t, i] = 1.0
                    if info["timeout"] and not info["fell"]:
                        fin_obs = scale_obs(new_obs, nominal_q)
                        with torch.no_grad():
                            zt = adaptation(torch.from_numpy(
                                buffers[i].window()[None]).float())
                            it = torch.cat([torch.from_numpy(np.concatenate(
                                [fin_obs, prev_a[i]])[None]).float(), zt,
                                torch.from_numpy(codes[i][None]).float()], 1)
                            next_values[t, i] = value_norm.denormalize(
                                float(value_net(it)))
                    reset_seed += 1
                    new_obs = env.reset(seed=reset_seed)
                    buffers[i].reset()
                    prev_a[i] = 0.0
                    v_cmd[i] = sample_velocity()
                    codes[i] = encode_velocity(v_cmd[i])
                    env.set_v_target(v_cmd[i])
                    steps_since_resample[i] = 0
                elif steps_since_resample[i] >= cfg.resample_every:
                    v_cmd[i] = sample_velocity()
                    codes[i] = encode_velocity(v_cmd[i])
                    env.set_v_target(v_cmd[i])
                    steps_since_resample[i] = 0
                obs[i] = scale_obs(new_obs, nominal_q)

        # bootstrap for rows still alive at the horizon edge
        window_np = np.stack([b.window() for b in buffers])
        obs_part = np.concatenate([np.stack(obs), prev_a], axis=1)
        with torch.no_grad():
            z_hat = adaptation(torch.from_numpy(window_np).float())
            inp = torch.cat([torch.from_numpy(obs_part).float(), z_hat,
                             torch.from_numpy(codes).float()], dim=1)
            boot = value_norm.denormalize(value_net(inp).numpy())
        live = dones[H - 1] == 0.0
        next_values[H - 1, live] = boot[live]
        for t in range(H - 2, -1, -1):
            live = dones[t] == 0.0
            next_values[t, live] = values[t + 1, live]

        adv, rets = compute_gae(rewards, values, dones, next_values, gamma, lam)
        B = H * N
        adv_flat = adv.reshape(B)
        adv_flat = (adv_flat - adv_flat.mean()) / (adv_flat.std() + 1e-8)

        obs_b = torch.from_numpy(obs_parts.reshape(B, -1)).float()
        win_b = torch.from_numpy(windows.reshape(B, -1)).float()
        code_b = torch.from_numpy(code_rows.reshape(B, -1)).float()
        fac_b = torch.from_numpy(factor_rows.reshape(B, -1)).float()
        act_b = torch.from_numpy(actions.reshape(B, ACT_DIM)).float()
        logp_b = torch.from_numpy(log_probs.reshape(B)).float()
        adv_b = torch.from_numpy(adv_flat).float()
        value_norm.update(rets.reshape(B))
        ret_b = torch.from_numpy(value_norm.normalize(rets.reshape(B))).float()
        oldv_b = torch.from_numpy(value_norm.normalize(values.reshape(B))).float()
        mmask_b = torch.from_numpy(mode_mask.reshape(B))

        ppo = cfg.ppo
        idx = torch.randperm(B, generator=perm_gen)
        mb = B // ppo.minibatches
        d_losses, p_losses = [], []
        for _ in range(ppo.epochs):
            for mth in range(ppo.minibatches):
                sel = idx[mth * mb:(mth + 1) * mb]
                z_hat = adaptation(win_b[sel])
                inp = torch.cat([obs_b[sel], z_hat, code_b[sel]], dim=1)
                dist = student.distribution(inp)
                logp = dist.log_prob(act_b[sel]).sum(-1)
                ratio = torch.exp(logp - logp_b[sel])
                clipped = torch.clamp(ratio, 1 - ppo.clip_ratio, 1 + ppo.clip_ratio)
                pg = -torch.min(ratio * adv_b[sel], clipped * adv_b[sel]).mean()
                v = value_net(inp)
                v_clip = oldv_b[sel] + torch.clamp(v - oldv_b[sel],
                                                   -ppo.value_clip, ppo.value_clip)
                v_loss = torch.max((v - ret_b[sel]) ** 2,
                                   (v_clip - ret_b[sel]) ** 2).mean()
                loss = pg + ppo.value_coef * v_loss

                if w > 0.0:
                    if cfg.on_policy_distill:
                        d_loss = _distill_loss_on_policy(
                            student, adaptation, experts_w, obs_b, win_b,
                            code_b, fac_b, sel, mmask_b)
                    else:
                        d_loss = _distill_loss_expert_states(
                            student, adaptation, experts_w, expert_sets,
                            mb, perm_gen)
                    if d_loss is not None:
                        loss = loss + cfg.distill_coef * w * d_loss
                        d_losses.append(float(d_loss))

                if not torch.isfinite(loss):
                    continue
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                student.project_std()
                p_losses.append(float(pg))

        row = {
            "epoch": epoch,
            "distill_weight": w,
            "mean_reward": float(rewards.mean()),
            "mean_speed": float(np.mean(speeds)),
            "policy_loss": float(np.mean(p_losses)) if p_losses else float("nan"),
            "distill_loss": float(np.mean(d_losses)) if d_losses else float("nan"),
            "episodes": int(dones.sum()),
        }
        telemetry.append(row)
        if not quiet and (epoch % 10 == 0 or epoch == cfg.epochs - 1):
            print(f"[distill {epoch:4d}] w={w:.3f} reward={row['mean_reward']:8.2f} "
                  f"speed={row['mean_speed']:+.3f} "
                  f"d_loss={row['distill_loss']:.4f}")

    bundle = ConditionedPolicyBundle(policy=student, adaptation=adaptation,
                                     value=value_net)
    return bundle, telemetry


def eval_transition(bundle: ConditionedPolicyBundle, env_factory,
                    schedule: list[tuple[float, float]], duration: float = 10.0,
                    seed: int = 0):
    """Run one episode stepping the commanded speed through ``schedule``
    ((t_start_s, v_target) rows). Returns contacts, speeds, and energy."""
    env = env_factory(0)
    env.enable_logging()
    nominal_q = env.model.nominal_stand_q
    obs = scale_obs(env.reset(seed=seed), nominal_q)
    buffer = HistoryBuffer()
    prev_a = np.zeros(ACT_DIM)
    contacts = []
    speeds = []
    v_cmds = []
    steps = int(duration / 0.01)
    fell = False
    for k in range(steps):
        t = k * 0.01
        v = schedule[0][1]
        for t_start, v_target in schedule:
            if t >= t_start:
                v = v_target
        env.set_v_target(v)
        code = encode_velocity(v)
        action = bundle.act(obs, prev_a, buffer.window(), code)
        new_obs, r, done, info = env.step(action)
        buffer.push(obs, action)
        prev_a = action
        obs = scale_obs(new_obs, nominal_q)
        contacts.append(env.state.foot_contact.copy())
        speeds.append(info["vx"])
        v_cmds.append(v)
        if done:
            fell = bool(info["fell"])
            break
    return {
        "contacts": np.array(contacts, dtype=bool),
        "speeds": np.array(speeds),
        "v_cmd": np.array(v_cmds),
        "fell": fell,
        "energy_accum": float(env.state.energy_accum),
        "log_rows": env.log_rows,
    }
