import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphnet.env import (EnvBatch, EnvConfig, EnvState, gait_actions, generate_family, observe,
                          random_actions, random_baseline, reset, rollout_return, step)
from morphnet.graph import TORSO, Morphology, validate

CFG = EnvConfig()


def walker(n):
    return generate_family("chain_walker", [n], variants=False)[0]


def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(dt=0)
    with pytest.raises(ValueError):
        EnvConfig(episode_len=0)
    with pytest.raises(ValueError):
        EnvConfig(gear=(1.0, 2.0))


def test_reset_is_deterministic_and_small():
    m = walker(5)
    a, b = reset(m, CFG, 3), reset(m, CFG, 3)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert np.all(np.abs(a.theta) <= 0.1)
    assert a.t == 0 and a.x == 0.0 and np.all(a.theta_dot == 0)


def test_zero_actions_from_rest_give_zero_reward():
    m = walker(4)
    s = EnvState(x=0.0, theta=np.zeros(4), theta_dot=np.zeros(4))
    _, r, _ = step(s, np.zeros(4), m, CFG)
    assert r == 0.0


def test_velocity_sign_follows_joint_velocity():
    m = Morphology("leg", 2, (TORSO, 1), ((0, 1),))
    cfg = EnvConfig(ctrl_cost=0.0)
    base = dict(x=0.0, theta=np.array([0.0, 0.5]))
    _, r_pos, _ = step(EnvState(theta_dot=np.array([0.0, 2.0]), **base), np.zeros(2), m, cfg)
    _, r_neg, _ = step(EnvState(theta_dot=np.array([0.0, -2.0]), **base), np.zeros(2), m, cfg)
    assert r_pos > 0 > r_neg


def test_control_cost_excludes_root():
    m = walker(5)
    cfg = EnvConfig(propulsion=(0.0,) * 5)
    s = EnvState(x=0.0, theta=np.zeros(5), theta_dot=np.zeros(5))
    _, r, _ = step(s, np.ones(5), m, cfg)
    assert r == pytest.approx(-cfg.ctrl_cost * 4, abs=1e-15)


def test_out_of_range_actions_are_clamped_and_counted():
    m = walker(3)
    s = reset(m, CFG, 0)
    s2, _, _ = step(s, np.array([0.0, 3.0, -2.0]), m, CFG)
    s3, _, _ = step(s, np.array([0.0, 1.0, -1.0]), m, CFG)
    assert s2.clamped_actions == 2
    np.testing.assert_array_equal(s2.theta, s3.theta)


def test_done_at_episode_length():
    m = walker(3)
    cfg = EnvConfig(episode_len=3)
    s = reset(m, cfg, 0)
    dones = []
    for _ in range(3):
        s, _, d = step(s, np.zeros(3), m, cfg)
        dones.append(d)
    assert dones == [False, False, True]


def test_observation_layout():
    m3, m8 = walker(3), walker(8)
    o3 = observe(reset(m3, CFG, 0), m3, CFG)
    o8 = observe(reset(m8, CFG, 0), m8, CFG)
    assert o3.shape[1] == o8.shape[1] == CFG.obs_dim()
    root = o8[m8.root]
    assert root[5] == 0.0 and root[6] == 1.0  # sin, cos
    assert root[9] == 0.0  # depth
    np.testing.assert_array_equal(o8[:, :5].sum(axis=1), np.ones(8))


def test_replay_is_bit_exact():
    m = walker(5)
    acts = np.random.default_rng(0).uniform(-1, 1, size=(50, 5))

    def run():
        s = reset(m, CFG, 11)
        out = []
        for a in acts:
            s, r, _ = step(s, a, m, CFG)
            out.append(r)
        return np.array(out)

    assert run().tobytes() == run().tobytes()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_states_and_rewards_stay_bounded(K, seed):
    m = generate_family("chain_mixed", [K], seed=seed % 97, variants=False)[0]
    rng = np.random.default_rng(seed)
    s = reset(m, CFG, seed)
    lo, hi = CFG.reward_bounds(K)
    for _ in range(60):
        s, r, _ = step(s, rng.uniform(-1.5, 1.5, size=K), m, CFG)
        assert lo - 1e-12 <= r <= hi + 1e-12 and np.isfinite(r)
        assert np.all(np.abs(s.theta) <= CFG.joint_range)
        assert np.all(np.abs(s.theta_dot) <= CFG.omega_max)


def test_batch_reproduces_single_environment():
    m = walker(4)
    seeds = [5, 9]
    batch = EnvBatch(m, CFG, seeds)
    singles = [reset(m, CFG, s) for s in seeds]
    rng = np.random.default_rng(0)
    for _ in range(30):
        a = random_actions(rng, m, 2)
        np.testing.assert_array_equal(batch.observe(), np.stack([observe(s, m, CFG) for s in singles]))
        r, _ = batch.step(a)
        for i in range(2):
            singles[i], ri, _ = step(singles[i], a[i], m, CFG)
            assert r[i] == ri


def test_optimal_single_step_profile_depends_on_morphology():
    def best_profile(m):
        s = reset(m, CFG, 0)
        s = EnvState(x=0.0, theta=s.theta, theta_dot=np.full(m.num_nodes, 0.5))
        best, arg = -np.inf, None
        for a in itertools.product((-1.0, 0.0, 1.0), repeat=m.num_nodes):
            nxt, _, _ = step(s, np.array(a), m, CFG)
            v = (nxt.x - s.x) / CFG.dt
            if v > best + 1e-12:
                best, arg = v, a
        return arg

    assert best_profile(walker(3)) != best_profile(walker(5))


def test_gait_oracle_has_headroom_over_random():
    for kind in ("chain_walker", "chain_mixed"):
        for m in generate_family(kind, range(3, 9), seed=0):
            rand = random_baseline(m, CFG, episodes=5)
            gait = np.mean([rollout_return(m, CFG, "gait", s) for s in range(3)])
            assert gait >= 5 * rand, (m.name, gait, rand)
            assert gait > 0


def test_gait_actions_mask_root():
    m = walker(4)
    a = gait_actions(np.array([0.2, -0.3, 0.0, 0.1]), np.zeros(4), m)
    np.testing.assert_array_equal(a, [0.0, -1.0, 1.0, 1.0])


def test_family_generation():
    w = generate_family("chain_walker", [5], seed=0)
    base, missing = w
    assert base.name == "chain_walker_5" and base.num_nodes == 5 and base.root == 0
    assert base.edges == ((0, 1), (1, 2), (2, 3), (3, 4))
    assert missing.num_nodes == 4
    validate(missing)
    assert generate_family("chain_mixed", [3, 6], seed=4) == generate_family("chain_mixed", [3, 6], seed=4)
    with pytest.raises(ValueError):
        generate_family("chain_walker", [1])
    with pytest.raises(ValueError):
        generate_family("blob", [3])
