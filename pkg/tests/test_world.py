import math

import numpy as np
import pytest

from isacspike.channel import LinkConstants, jain_index, matched_plan, rates_from_sinr, comm_sinr_all
from isacspike.config import load_config
from isacspike.estimation import crlb_theta_all, noise_variances_all
from isacspike.world import (KinematicsNoise, V2XEnv, VehicleState, decode_action, evolve,
                             init_episode, reward)

CFG = load_config()
ZERO = KinematicsNoise()


def test_evolve_broadside():
    s = evolve(VehicleState(math.pi / 2, 10.0, 12.0), 0.02, ZERO, np.random.default_rng(0))
    assert abs(s.d - 10.0) < 1e-12
    assert abs(s.theta - (math.pi / 2 + 12 * 0.02 / 10)) < 1e-12


def test_evolve_formula_oracle():
    s = evolve(VehicleState(1.0, 11.18, 12.0), 0.02, ZERO, np.random.default_rng(0))
    assert abs(s.theta - 1.0180637778491857) < 1e-12
    assert abs(s.d - 11.050327446591647) < 1e-12
    assert s.v == 12.0


def test_evolve_range_noise_std():
    rng = np.random.default_rng(1)
    noise = KinematicsNoise.from_config(CFG)
    s0 = VehicleState(math.pi / 2, 30.0, 12.0)
    d = np.array([evolve(s0, 0.02, noise, rng).d for _ in range(20000)])
    assert abs(d.std() / 0.2 - 1) < 0.03


def test_evolve_clamps_range():
    s = evolve(VehicleState(0.5, 0.6, 14.0), 1.0, ZERO, np.random.default_rng(0))
    assert s.d == 0.5 and 0 < s.theta < math.pi


def test_init_episode():
    st = init_episode(CFG, np.random.default_rng(3))
    assert abs(st[0].d - 11.180339887498949) < 1e-12
    assert abs(math.cos(st[0].theta) - 5 / math.sqrt(125)) < 1e-12
    assert abs(st[0].theta - 1.1071487177940904) < 1e-12
    assert abs(st[2].d - math.sqrt(725)) < 1e-12
    rng = np.random.default_rng(4)
    v = [s.v for _ in range(500) for s in init_episode(CFG, rng)]
    assert min(v) >= 10 and max(v) <= 14


def test_decode_zero_and_saturated():
    centers = np.array([1.1, 0.6, 0.4])
    plan, act = decode_action(np.zeros(6), CFG, centers)
    assert np.allclose(act.steer_angles, centers)
    assert np.allclose(plan.powers, CFG.pmax_w / 3, rtol=1e-9)
    raw = np.zeros(6)
    raw[3] = np.inf
    plan, _ = decode_action(raw, CFG, centers)
    assert plan.powers[0] / CFG.pmax_w > 1 - 1e-9
    assert (plan.powers > 0).all()
    assert abs(plan.powers.sum() - CFG.pmax_w) < 1e-9
    with pytest.raises(ValueError):
        decode_action(np.zeros(5), CFG, centers)


def test_reward_zero_when_constraints_fail():
    cfg = CFG.replace(eps_d=1e-30)
    st = init_episode(cfg, np.random.default_rng(0))
    th = np.array([s.theta for s in st])
    d = np.array([s.d for s in st])
    r, info = reward(matched_plan(th, 32, cfg.pmax_w), th, d, cfg)
    assert r == 0.0 and not info["constraint_ok"]


def test_reward_single_vehicle_composition():
    cfg = CFG.replace(n_vehicles=1, init_positions="-5,10")
    link = LinkConstants.from_config(cfg)
    th, d = np.array([1.1071487177940904]), np.array([math.sqrt(125)])
    plan = matched_plan(th, 32, cfg.pmax_w)
    r, info = reward(plan, th, d, cfg)
    rate = rates_from_sinr(comm_sinr_all(plan, th, d, link))
    vd, _, _ = noise_variances_all(plan, th, d, link, 1e-9, 2e3)
    ct = crlb_theta_all(plan, th, d, link)
    expected = rate.sum() * 2.0 - ct.mean() - (vd * 299_792_458.0**2 / 4).mean()
    assert info["constraint_ok"]
    assert info["fairness"] == 2.0
    assert abs(r - expected) < 1e-12 * abs(expected)


def test_jain_scale_invariance():
    r = np.array([1.0, 2.0, 5.0])
    assert abs(jain_index(r) - jain_index(7.3 * r)) < 1e-12


def _run(seed, actions):
    env = V2XEnv(CFG)
    obs = [env.reset(seed=seed)]
    rewards = []
    for a in actions:
        out = env.step(a)
        obs.append(out.observation)
        rewards.append(out.reward)
        if out.done:
            break
    return np.array(obs), np.array(rewards), env


def test_episode_length_and_observation():
    acts = [np.zeros(6)] * 100
    obs, rew, env = _run(5, acts)
    assert len(rew) == 100 and env.done
    assert obs.shape[1] == 12 == 4 * CFG.n_vehicles
    with pytest.raises(RuntimeError):
        env.step(np.zeros(6))


def test_seeded_trajectory_is_reproducible():
    rng = np.random.default_rng(8)
    acts = [rng.normal(size=6) for _ in range(20)]
    o1, r1, _ = _run(42, acts)
    o2, r2, _ = _run(42, acts)
    assert np.array_equal(o1, o2) and np.array_equal(r1, r2)
    # golden values recorded from a seeded run
    assert r1[-1] == pytest.approx(6.804414125759789, rel=1e-12)
    assert r1.sum() == pytest.approx(91.4581965022303, rel=1e-12)


def test_zero_noise_geometry():
    cfg = CFG.replace(sigma_theta_deg=0.0, sigma_d_m=0.0, sigma_v_mps=0.0)
    noise = KinematicsNoise.from_config(cfg)
    s = VehicleState(1.1071487177940904, math.sqrt(125), 12.0)
    ds, cs = [], []
    rng = np.random.default_rng(0)
    for _ in range(300):
        ds.append(s.d)
        cs.append(math.cos(s.theta))
        s = evolve(s, 0.02, noise, rng)
    ds, cs = np.array(ds), np.array(cs)
    i = int(np.argmin(ds))
    assert 0 < i < len(ds) - 1
    assert np.all(np.diff(ds[: i + 1]) < 0) and np.all(np.diff(ds[i:]) > 0)
    assert np.all(cs[:i] > 0) and np.all(cs[i + 1:] < 0)
    # closest approach is the road offset, up to the drift of the first-order update
    assert abs(ds[i] - 10.0) < 0.1


def test_env_seeds_spawn_distinct_episodes():
    env = V2XEnv(CFG, seed=1)
    a = env.reset()
    b = env.reset()
    assert not np.array_equal(a, b)
