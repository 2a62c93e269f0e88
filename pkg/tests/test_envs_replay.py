import itertools

import numpy as np
import pytest
from scipy import stats

from kaleido.envs import (HeteroReach, HeteroSpread, best_identical_action_return, make_env,
                          oracle_return)
from kaleido.replay import ReplayBuffer, Transition

# frozen from one scripted rollout / one exhaustive identical-action search at the default start
SPREAD_ORACLE_RETURN = 24.0
SPREAD_IDENTICAL_BOUND = 6.0


# ---------------------------------------------------------------- HeteroSpread

def test_spread_dimensions():
    env = HeteroSpread()
    obs, state = env.reset(seed=0)
    assert env.spec.obs_dim == 2 * (4 + 4 - 1) + 2
    assert obs.shape == (4, env.spec.obs_dim)
    assert state.shape == (env.spec.state_dim,) == (2 * 8,)


def test_spread_reset_deterministic():
    a, b = HeteroSpread(), HeteroSpread()
    assert np.array_equal(a.reset(seed=3)[0], b.reset(seed=3)[0])


def test_spread_reward_examples():
    assert HeteroSpread.reward_for([(2, 2), (2, 3), (3, 2), (3, 3)]) == 0.0
    assert HeteroSpread.reward_for([(3, 3)] * 4) == pytest.approx(-0.6)
    assert HeteroSpread.reward_for(list(HeteroSpread.landmarks)) == 1.0


def test_spread_reward_bounds_over_random_layouts():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        r = HeteroSpread.reward_for(rng.integers(0, 7, size=(4, 2)))
        assert -0.6 <= r <= 1.0


def test_spread_step_and_truncation():
    env = HeteroSpread(episode_limit=3)
    env.reset()
    for t in range(3):
        res = env.step(np.zeros(4, dtype=np.int64))
    assert res.done and res.truncated
    with pytest.raises(ValueError):
        env.step(np.zeros(3, dtype=np.int64))
    with pytest.raises(ValueError):
        env.step(np.array([0, 0, 0, 7]))
    with pytest.raises(ValueError):
        env.step(np.zeros(4))


def test_spread_deterministic_given_actions():
    rng = np.random.default_rng(1)
    acts = rng.integers(0, 5, size=(25, 4))
    runs = []
    for _ in range(2):
        env = HeteroSpread()
        env.reset()
        runs.append([env.step(a).reward for a in acts])
    assert runs[0] == runs[1]


def test_spread_oracle_value_frozen():
    env = HeteroSpread()
    env.reset()
    assert oracle_return(env) == SPREAD_ORACLE_RETURN


def test_spread_oracle_on_landmarks():
    env = HeteroSpread()
    env.reset()
    env.set_positions(HeteroSpread.landmarks, t=20)
    assert oracle_return(env) == 5.0
    with pytest.raises(ValueError):
        oracle_return(env, horizon=0)


def test_identical_action_bound_matches_exhaustive_search():
    env = HeteroSpread()
    env.reset()
    for h in (1, 3, 6):
        brute = -np.inf
        for seq in itertools.product(range(5), repeat=h):
            pos, total = env.pos.copy(), 0.0
            for a in seq:
                pos = HeteroSpread.move(pos, [a] * 4)
                total += HeteroSpread.reward_for(pos)
            brute = max(brute, total)
        assert best_identical_action_return(env, h) == pytest.approx(brute)


def test_heterogeneity_gap():
    env = HeteroSpread()
    env.reset()
    bound = best_identical_action_return(env)
    assert bound == SPREAD_IDENTICAL_BOUND
    assert bound < oracle_return(env)


# ---------------------------------------------------------------- HeteroReach

def test_reach_layout_and_reward():
    env = HeteroReach()
    obs, state = env.reset()
    assert obs.shape == (3, 12) and state.shape == (12,)
    np.testing.assert_allclose(np.linalg.norm(env.targets, axis=1), 1.0)
    # all masses at the origin: every target is 1 away, three colliding pairs
    assert env.reward_for(np.zeros((3, 2))) == pytest.approx(-1.0 - 0.75)
    assert env.reward_for(env.targets) == pytest.approx(0.0)


def test_reach_clips_actions():
    env = HeteroReach()
    env.reset()
    res = env.step(np.array([[5.0, 0.0], [0.0, -5.0], [0.0, 0.0]]))
    np.testing.assert_allclose(env.pos[:2], [[0.1, 0.0], [0.0, -0.1]])
    assert not res.done
    with pytest.raises(ValueError):
        env.step(np.full((3, 2), np.nan))


def test_make_env():
    assert isinstance(make_env("hetero_reach"), HeteroReach)
    with pytest.raises(ValueError):
        make_env("smac")


# ---------------------------------------------------------------- replay

def transition(spec, k):
    n = spec.n_agents
    return Transition(np.full(spec.state_dim, k, float), np.full((n, spec.obs_dim), k, float),
                      np.full(n, k % 5, np.int64), float(k), np.full(spec.state_dim, k + 1, float),
                      np.full((n, spec.obs_dim), k + 1, float), False)


def test_replay_ring_behaviour():
    spec = HeteroSpread().spec
    buf = ReplayBuffer(2, spec)
    for k in range(3):
        buf.push(transition(spec, k))
    assert len(buf) == 2 and buf.cursor == 1
    assert sorted(buf.reward.tolist()) == [1.0, 2.0]


def test_replay_single_item_sample():
    spec = HeteroSpread().spec
    buf = ReplayBuffer(4, spec)
    buf.push(transition(spec, 7))
    batch = buf.sample(1, np.random.default_rng(0))
    assert batch["reward"].tolist() == [7.0]
    with pytest.raises(ValueError):
        buf.sample(3, np.random.default_rng(0))


def test_replay_shape_checks():
    spec = HeteroSpread().spec
    buf = ReplayBuffer(4, spec)
    bad = transition(spec, 0)
    bad.obs = np.zeros((3, spec.obs_dim))
    with pytest.raises(ValueError):
        buf.push(bad)


def test_replay_sampling_deterministic_and_non_mutating():
    spec = HeteroSpread().spec
    buf = ReplayBuffer(10, spec)
    for k in range(10):
        buf.push(transition(spec, k))
    snap = buf.obs.copy()
    a = buf.sample(8, np.random.default_rng(5))
    b = buf.sample(8, np.random.default_rng(5))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    a["obs"][:] = -1.0
    assert np.array_equal(buf.obs, snap)


def test_replay_uniform_chi_square():
    spec = HeteroSpread().spec
    buf = ReplayBuffer(50, spec)
    for k in range(50):
        buf.push(transition(spec, k))
    rng = np.random.default_rng(11)
    idx = np.concatenate([buf.sample_indices(50, rng) for _ in range(2000)])
    counts = np.bincount(idx, minlength=50)
    assert stats.chisquare(counts).pvalue > 1e-3
    # every cell within 3 sigma of the binomial mean
    mean, sd = 100_000 / 50, np.sqrt(100_000 * (1 / 50) * (49 / 50))
    assert np.all(np.abs(counts - mean) < 3 * sd + 1)
