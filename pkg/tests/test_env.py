import numpy as np
import pytest

from gaitlab.env import (ACTION_BOUND, EnvConfig, EpisodeFinished,
                         LocomotionEnv, RewardConfig, compute_reward)
from gaitlab.randomize import AGGRESSIVE, FIXED, NORMAL, EnvParams
from gaitlab.terrain import FLAT, FractalParams


def make_env(v_target=0.375, profile="normal", seed=7, **kw):
    cfg = EnvConfig(reward=RewardConfig(v_target=v_target), profile=profile,
                    terrain_params=FLAT, **kw)
    return LocomotionEnv(cfg, seed=seed)


def test_observation_contract():
    env = make_env()
    obs = env.reset(seed=0)
    assert obs.shape == (30,)
    assert set(np.unique(obs[26:30])) <= {0.0, 1.0}
    # layout: q, qdot, roll, pitch, contacts
    assert np.allclose(obs[0:12], env.state.q)
    assert np.allclose(obs[12:24], env.state.q_dot)


def test_reset_determinism():
    env = make_env()
    a = env.reset(seed=3)
    b = env.reset(seed=3)
    assert np.array_equal(a, b)


def test_reset_settles_level():
    env = make_env(profile="fixed")
    env.reset(seed=1)
    for _ in range(100):  # settle under zero-delta PD
        obs, _, done, info = env.step(np.zeros(12))
        assert not done
    assert abs(info["roll"]) < 0.02
    assert abs(info["pitch"]) < 0.02


def test_aggressive_profile_ranges():
    env = make_env(profile="aggressive")
    frictions = []
    for s in range(40):
        env.reset(seed=s)
        frictions.append(env.params.friction)
        assert 0.05 <= env.params.friction <= 4.5
        assert 0.0 <= env.params.payload <= 6.0
        assert np.all(np.abs(env.params.com_offset) <= 0.15)
        assert np.all((0.9 <= env.params.motor_strength)
                      & (env.params.motor_strength <= 1.1))
    assert np.std(frictions) > 0.1  # actually samples the range


def test_reward_decomposition_exact():
    rc = RewardConfig(v_target=0.9)
    r, rf, re, ra = compute_reward(vx=0.9, vy=0.0, yaw_rate=0.0, power=0.0, rc=rc)
    assert ra == pytest.approx(18.0)
    assert r == pytest.approx(18.0)

    rc = RewardConfig(v_target=0.375)
    r, rf, re, ra = compute_reward(vx=0.0, vy=0.0, yaw_rate=0.0, power=50.0, rc=rc)
    assert r == pytest.approx(-20 * 0.375 - 0.04 * 50 + 7.5)
    assert r == pytest.approx(-2.0)


def test_reward_identity_during_rollout():
    env = make_env()
    env.reset(seed=5)
    rng = np.random.default_rng(2)
    for i in range(200):
        obs, r, done, info = env.step(rng.normal(0, 0.1, 12))
        resid = (r - info["r_addon"] - info["r_alive"]
                 + 20.0 * abs(info["vx"] - info["v_target"])
                 + info["vy"] ** 2 + info["yaw_rate"] ** 2
                 + 0.04 * info["power_raw"])
        assert abs(resid) < 1e-9
        if done:
            env.reset(seed=i)


def test_action_clamping_visible_in_targets():
    env = make_env()
    env.reset(seed=0)
    _, _, _, info = env.step(np.full(12, 10.0))
    assert np.allclose(info["q_target"],
                       env.model.nominal_stand_q + ACTION_BOUND)
    _, _, _, info = env.step(np.full(12, -10.0))
    assert np.allclose(info["q_target"],
                       env.model.nominal_stand_q - ACTION_BOUND)


def test_pitch_termination():
    env = make_env()
    env.reset(seed=0)
    # tip the torso past the pitch limit and step once
    q = env.state.base_orientation
    pitch = 0.25
    env.state.base_orientation = np.array(
        [np.cos(pitch / 2), 0.0, np.sin(pitch / 2), 0.0])
    env.state.fk = None
    obs, r, done, info = env.step(np.zeros(12))
    assert done and info["fell"]
    assert abs(info["pitch"]) > 0.2


def test_episode_length_cap():
    env = make_env(seed=11, profile="fixed")
    env.reset(seed=1)
    done = False
    steps = 0
    while not done:
        obs, r, done, info = env.step(np.zeros(12))
        steps += 1
        assert steps <= 1000
    assert steps == 1000
    assert info["timeout"] and not info["fell"]


def test_step_after_done_rejected():
    env = make_env()
    env.reset(seed=0)
    env._done = True
    with pytest.raises(EpisodeFinished):
        env.step(np.zeros(12))


def test_nonfinite_action_rejected():
    env = make_env()
    env.reset(seed=0)
    bad = np.zeros(12)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        env.step(bad)


def test_energy_ablation_only_changes_reward():
    actions = [np.random.default_rng(3).normal(0, 0.1, 12) for _ in range(50)]
    cfg_a = EnvConfig(reward=RewardConfig(v_target=0.375), terrain_params=FLAT)
    cfg_b = EnvConfig(reward=RewardConfig(v_target=0.375, alpha_energy=0.0),
                      terrain_params=FLAT)
    env_a = LocomotionEnv(cfg_a, seed=9)
    env_b = LocomotionEnv(cfg_b, seed=9)
    obs_a = env_a.reset(seed=2)
    obs_b = env_b.reset(seed=2)
    assert np.array_equal(obs_a, obs_b)
    rewards_differ = False
    for a in actions:
        obs_a, ra, done_a, info_a = env_a.step(a)
        obs_b, rb, done_b, info_b = env_b.step(a)
        assert np.array_equal(obs_a, obs_b)
        assert done_a == done_b
        if abs(ra - rb) > 1e-12:
            rewards_differ = True
        if done_a:
            break
    assert rewards_differ


def test_factor_vector_layout():
    env = make_env(profile="fixed")
    env.reset(seed=0)
    env.params.friction = 0.8
    env.params.motor_strength = np.ones(12)
    env.params.payload = 0.0
    env.params.com_offset = np.zeros(3)
    e = env.factor_vector()
    assert e.shape == (19,)
    assert np.allclose(e[0:3], 0.0)  # com + payload
    assert np.allclose(e[3:15], 1.0)  # motor strength
    assert e[15] == pytest.approx(0.8)  # friction
    assert np.allclose(e[16:19], 0.0)  # smoothed velocities at reset


def test_factor_smoothing_recurrence():
    env = make_env(profile="fixed")
    env.reset(seed=0)
    obs, r, done, info = env.step(np.zeros(12))
    e = env.factor_vector()
    # first step from s0 = 0: s1 = 0.2 * v1
    assert e[16] == pytest.approx(0.2 * info["vx"])
    assert e[17] == pytest.approx(0.2 * info["vy"])
    prev = e[16:19].copy()
    obs, r, done, info = env.step(np.zeros(12))
    e2 = env.factor_vector()
    expected = 0.2 * np.array([info["vx"], info["vy"], info["yaw_rate"]]) \
        + 0.8 * prev
    assert np.allclose(e2[16:19], expected)


def test_factor_smoothing_converges_to_constant():
    s = 0.0
    for _ in range(80):
        s = 0.2 * 1.0 + 0.8 * s
    assert s == pytest.approx(1.0, abs=1e-6)


def test_params_resample_stream():
    env = make_env(profile="normal")
    env.reset(seed=4)
    frictions = set()
    for i in range(400):
        _, _, done, _ = env.step(np.zeros(12))
        frictions.add(env.params.friction)
        if done:
            break
    # with resample prob 0.02 over 400 steps, at least one resample is
    # overwhelmingly likely (P[none] ~ 3e-4)
    assert len(frictions) > 1


def test_trajectory_csv(tmp_path):
    env = make_env()
    env.enable_logging()
    env.reset(seed=0)
    for _ in range(20):
        env.step(np.zeros(12))
    path = tmp_path / "log.csv"
    env.write_trajectory_csv(str(path))
    header = path.read_text().splitlines()[0].split(",")
    for col in ("t", "q0", "qd11", "tau5", "base_x", "base_qw", "vel_x",
                "contact_rf", "contact_lr", "r_forward", "r_energy",
                "r_alive", "power_raw", "energy_accum"):
        assert col in header
    assert len(path.read_text().splitlines()) == 21
