import numpy as np
import pytest
import torch

from gaitlab.distill import (MODES, ConditionedPolicyBundle, DistillConfig,
                             collect_expert_states, decode_velocity,
                             distill_weight, encode_velocity,
                             eval_transition, train_conditioned, _Expert)
from gaitlab.env import EnvConfig, LocomotionEnv, RewardConfig
from gaitlab.nets import AdaptationModule, EnvEncoder, PolicyNet
from gaitlab.terrain import FLAT


def test_encode_exact_at_modes():
    assert np.allclose(encode_velocity(0.375), [1, 0, 0])
    assert np.allclose(encode_velocity(0.9), [0, 1, 0])
    assert np.allclose(encode_velocity(1.5), [0, 0, 1])


def test_encode_published_examples():
    assert np.allclose(encode_velocity(1.2), [0.0, 0.5, 0.5])
    assert np.allclose(encode_velocity(0.5), [0.238, 0.762, 0.0], atol=1e-3)


def test_encode_rejects_out_of_range():
    with pytest.raises(ValueError):
        encode_velocity(0.3)
    with pytest.raises(ValueError):
        encode_velocity(1.6)


def test_code_simplex_structure():
    for v in np.linspace(0.375, 1.5, 101):
        code = encode_velocity(float(v))
        assert code.sum() == pytest.approx(1.0)
        assert np.all(code >= -1e-12)
        nz = np.flatnonzero(code > 1e-12)
        assert len(nz) <= 2
        if len(nz) == 2:
            assert nz[1] - nz[0] == 1  # adjacent modes only


def test_encode_decode_inverse():
    for v in np.linspace(0.375, 1.5, 251):
        assert decode_velocity(encode_velocity(float(v))) == pytest.approx(
            float(v), abs=1e-9)


def test_encode_piecewise_linear_continuity():
    vs = np.linspace(0.375, 1.5, 2251)
    codes = np.array([encode_velocity(float(v)) for v in vs])
    jumps = np.abs(np.diff(codes, axis=0)).max()
    assert jumps < 0.01


def test_decode_rejects_non_codes():
    with pytest.raises(ValueError):
        decode_velocity(np.array([0.5, 0.0, 0.5]))  # non-adjacent support
    with pytest.raises(ValueError):
        decode_velocity(np.array([0.7, 0.7, 0.0]))  # not a simplex point


def test_distill_weight_schedule():
    assert distill_weight(0, 500) == pytest.approx(1.0)
    assert distill_weight(125, 500) == pytest.approx(0.5)
    assert distill_weight(250, 500) == 0.0
    assert distill_weight(400, 500) == 0.0
    # deterministic in the epoch index
    assert distill_weight(100, 500) == distill_weight(100, 500)


def _env_factory(i):
    cfg = EnvConfig(reward=RewardConfig(v_target=0.9), terrain_params=FLAT,
                    profile="desk-normal", episode_steps=200)
    return LocomotionEnv(cfg, seed=3200 + i)


def _random_expert(seed):
    torch.manual_seed(seed)
    policy = PolicyNet()
    encoder = EnvEncoder()
    # boost the output layer so the expert is a nontrivial target
    with torch.no_grad():
        policy.net[-1].weight.mul_(20.0)
    return policy, encoder


def test_train_conditioned_requires_all_experts():
    with pytest.raises(ValueError):
        train_conditioned({0.375: _random_expert(0)}, _env_factory,
                          DistillConfig(epochs=1, n_envs=1, horizon=16))


def test_behavioral_cloning_converges_to_expert():
    # distillation-only warm start: the student's mean should approach the
    # expert's on a fixed set of expert-visited states
    policy, encoder = _random_expert(11)
    expert = _Expert(policy, encoder)
    data = collect_expert_states(expert, _env_factory, 0.9, steps=1000, seed=4)
    obs_part = torch.from_numpy(data["obs_part"]).float()
    window = torch.from_numpy(data["window"]).float()
    factors = torch.from_numpy(data["factors"]).float()
    with torch.no_grad():
        targets = expert.mean_action(obs_part, factors)
    torch.manual_seed(5)
    student = PolicyNet(extra_dims=3)
    adaptation = AdaptationModule()
    code = torch.tile(torch.tensor([0.0, 1.0, 0.0]), (len(obs_part), 1))
    opt = torch.optim.Adam(list(student.parameters())
                           + list(adaptation.parameters()), lr=1e-3)
    gen = torch.Generator().manual_seed(0)
    for _ in range(400):
        sel = torch.randint(0, len(obs_part), (256,), generator=gen)
        z_hat = adaptation(window[sel])
        inp = torch.cat([obs_part[sel], z_hat, code[sel]], dim=1)
        loss = torch.mean((student(inp) - targets[sel]) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        z_hat = adaptation(window)
        mean = student(torch.cat([obs_part, z_hat, code], dim=1))
        l2 = torch.sqrt(torch.mean((mean - targets) ** 2))
    assert float(l2) < 0.1


@pytest.fixture(scope="module")
def smoke_bundle():
    experts = {m: _random_expert(int(m * 100)) for m in MODES}
    cfg = DistillConfig(epochs=4, n_envs=2, horizon=48, seed=1,
                        resample_every=30)
    bundle, telemetry = train_conditioned(experts, _env_factory, cfg,
                                          quiet=True)
    return bundle, telemetry


def test_train_conditioned_smoke(smoke_bundle):
    bundle, telemetry = smoke_bundle
    assert len(telemetry) == 4
    ws = [row["distill_weight"] for row in telemetry]
    assert ws[0] == pytest.approx(1.0)
    assert ws == sorted(ws, reverse=True)
    assert np.isfinite(telemetry[-1]["mean_reward"])


def test_eval_transition_runs_schedule(smoke_bundle):
    bundle, _ = smoke_bundle
    out = eval_transition(bundle, _env_factory,
                          schedule=[(0.0, 0.375), (0.6, 0.9), (1.2, 1.5)],
                          duration=2.0, seed=3)
    assert out["contacts"].shape[1] == 4
    assert len(out["v_cmd"]) == len(out["speeds"])
    assert set(np.unique(out["v_cmd"])) <= {0.375, 0.9, 1.5}
    assert out["v_cmd"][0] == 0.375
    assert out["v_cmd"][-1] == 1.5 or out["fell"]


def test_off_policy_distill_mode_runs():
    experts = {m: _random_expert(int(m * 10)) for m in MODES}
    cfg = DistillConfig(epochs=2, n_envs=2, horizon=32, seed=2,
                        on_policy_distill=False, resample_every=25)
    bundle, telemetry = train_conditioned(experts, _env_factory, cfg,
                                          quiet=True)
    # the anneal hits zero at the half budget, so only epoch 0 distills
    assert np.isfinite(telemetry[0]["distill_loss"])
    assert not np.isfinite(telemetry[-1]["distill_loss"])
