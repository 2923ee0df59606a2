import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppocma.critic import (Critic, End, Trajectory, Transition, batch_gae, compute_gae,
                           gae_from_values, time_feature, train_critic)
from conftest import central_diff, rel_err


def test_time_feature_values():
    assert time_feature(0, 1000) == 0.0
    assert time_feature(1000, 1000) == 1.0
    assert time_feature(500, 1000) == 0.5
    with pytest.raises(ValueError):
        time_feature(0, 0)


def test_zero_critic_and_time_input():
    critic = Critic(2, hidden=(4,), seed=0)
    critic.net.params[:] = 0.0
    assert critic.value(np.ones((3, 2)), 5, 10).tolist() == [0.0, 0.0, 0.0]
    # linear path from the time input only
    critic.net.weights[0][2, 0] = 1.0
    critic.net.weights[1][0, 0] = 1.0
    v = critic.value(np.zeros((2, 2)), np.array([2, 8]), 10)
    assert v[0] == pytest.approx(0.2) and v[1] == pytest.approx(0.8)
    assert np.array_equal(v, critic.value(np.zeros((2, 2)), np.array([2, 8]), 10))


def test_critic_input_has_one_extra_column():
    assert Critic(5, hidden=(3,)).net.layout.input_dim == 6


def traj(rewards, end=End.TERMINAL, obs_dim=1, T=None, seed=0):
    r = np.random.default_rng(seed)
    n = len(rewards)
    obs = r.normal(size=(n, obs_dim))
    nxt = np.vstack([obs[1:], r.normal(size=(1, obs_dim))])
    return Trajectory(obs, np.zeros((n, 1)), np.asarray(rewards, float), nxt, end, T or max(n, 1))


def zero_critic(obs_dim=1):
    c = Critic(obs_dim, hidden=(3,), seed=0)
    c.net.params[:] = 0.0
    return c


def test_gae_hand_example():
    adv, _ = compute_gae(traj([1.0, 1.0]), zero_critic(), 0.5, 1.0)
    assert np.allclose(adv, [1.5, 1.0])


def test_gae_gamma_zero_is_reward_minus_value():
    critic = Critic(1, hidden=(4,), seed=3)
    tr = traj([0.3, -1.0, 2.0], end=End.TIMEOUT)
    adv, v = compute_gae(tr, critic, 0.0, 0.95)
    assert np.allclose(adv, tr.rewards - v)


def double_sum(rewards, values, bootstrap, gamma, lam):
    n = len(rewards)
    v_next = list(values[1:]) + [bootstrap]
    deltas = [rewards[t] + gamma * v_next[t] - values[t] for t in range(n)]
    return np.array([sum((gamma * lam) ** l * deltas[t + l] for l in range(n - t)) for t in range(n)])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=10), st.floats(0, 1), st.floats(0, 1),
       st.floats(-3, 3), st.integers(0, 1000))
def test_recursion_equals_double_sum(rewards, gamma, lam, bootstrap, seed):
    values = np.random.default_rng(seed).normal(size=len(rewards))
    got = gae_from_values(rewards, values, bootstrap, gamma, lam)
    assert np.allclose(got, double_sum(rewards, values, bootstrap, gamma, lam), atol=1e-12, rtol=0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=10), st.floats(0, 1), st.integers(0, 100))
def test_lambda_one_terminal_is_monte_carlo(rewards, gamma, seed):
    critic = Critic(1, hidden=(4,), seed=seed)
    tr = traj(rewards, seed=seed)
    adv, v = compute_gae(tr, critic, gamma, 1.0)
    n = len(rewards)
    mc = np.array([sum(gamma ** l * rewards[t + l] for l in range(n - t)) for t in range(n)])
    assert np.allclose(adv, mc - v, atol=1e-12, rtol=0)


def test_gamma_zero_ignores_successor_values():
    rewards = np.array([1.0, 2.0, 3.0])
    values = np.array([0.5, -1.0, 0.25])
    for boot in (0.0, 10.0, -7.0):
        assert np.array_equal(gae_from_values(rewards, values, boot, 0.0, 0.9), rewards - values)


def test_timeout_differs_from_terminal_only_by_bootstrap():
    critic = Critic(1, hidden=(4,), seed=2)
    gamma, lam = 0.9, 0.8
    term = traj([0.5, -0.2, 1.0], end=End.TERMINAL, T=3)
    tout = traj([0.5, -0.2, 1.0], end=End.TIMEOUT, T=3)
    a_term, v = compute_gae(term, critic, gamma, lam)
    a_tout, _ = compute_gae(tout, critic, gamma, lam)
    v_boot = critic.value(tout.next_obs[-1:], 3, 3)[0]
    n = 3
    expected = a_term + np.array([(gamma * lam) ** (n - 1 - t) * gamma * v_boot for t in range(n)])
    assert np.allclose(a_tout, expected, atol=1e-12)


def test_gae_argument_checks():
    with pytest.raises(ValueError):
        gae_from_values([], [], 0.0, 0.9, 0.9)
    with pytest.raises(ValueError):
        gae_from_values([1.0], [0.0], 0.0, 1.5, 0.9)
    with pytest.raises(ValueError):
        Trajectory(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0), np.zeros((0, 1)), End.TERMINAL, 1)


def test_batched_gae_matches_per_trajectory():
    critic = Critic(2, hidden=(6,), seed=4)
    trajs = [traj([1, 2, 3], End.TIMEOUT, obs_dim=2, T=3, seed=1),
             traj([0.5], End.TERMINAL, obs_dim=2, T=3, seed=2),
             traj([-1, 4], End.TIMEOUT, obs_dim=2, T=2, seed=3)]
    adv, v = batch_gae(trajs, critic, 0.95, 0.9)
    parts = [compute_gae(t, critic, 0.95, 0.9) for t in trajs]
    assert np.allclose(adv, np.concatenate([p[0] for p in parts]), atol=1e-12)
    assert np.allclose(v, np.concatenate([p[1] for p in parts]), atol=1e-12)


def test_transitions_round_trip():
    tr = traj([1.0, 2.0], End.TIMEOUT)
    back = Trajectory.from_transitions(tr.transitions(), tr.T)
    assert np.array_equal(back.rewards, tr.rewards) and back.end is End.TIMEOUT
    bad = [Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), End.TERMINAL, 0),
           Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), End.NONE, 1)]
    with pytest.raises(ValueError):
        Trajectory.from_transitions(bad, 2)
    skip = [Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), End.NONE, 1)]
    with pytest.raises(ValueError):
        Trajectory.from_transitions(skip, 2)


def test_l1_loss_gradient_matches_finite_differences():
    for seed in range(20):
        r = np.random.default_rng(seed)
        critic = Critic(3, hidden=(5, 4), seed=seed)
        x = critic.inputs(r.normal(size=(6, 3)), r.uniform(size=6), 1)
        targets = r.normal(size=6) * 3
        _, grad = critic.l1_loss(x, targets)
        fd = central_diff(lambda: float(np.mean(np.abs(critic.net.forward(x)[:, 0] - targets))),
                          critic.net.params)
        assert rel_err(grad, fd) < 1e-4


def test_l1_gradient_ignores_error_size():
    critic = Critic(1, hidden=(4,), seed=0)
    x = critic.inputs(np.ones((1, 1)), 0.0, 1)
    v = critic.net.forward(x)[0, 0]
    _, g_small = critic.l1_loss(x, np.array([v - 0.1]))
    _, g_big = critic.l1_loss(x, np.array([v - 100.0]))
    assert np.array_equal(g_small, g_big)


def test_fixed_point_when_targets_are_met():
    critic = Critic(2, hidden=(4,), seed=0)
    s = np.random.default_rng(0).normal(size=(10, 2))
    t = np.arange(10)
    targets = critic.value(s, t, 10)
    before = critic.net.params.copy()
    loss = train_critic(critic, s, t, 10, targets, K=5, M=4, rng=np.random.default_rng(0))
    assert loss == 0.0
    assert np.array_equal(before, critic.net.params)


def _regress(scale, K=2000):
    r = np.random.default_rng(0)
    s = r.uniform(-2, 2, size=(512, 2))
    targets = scale * np.sin(s[:, 0])
    critic = Critic(2, hidden=(64, 64), seed=0)
    train_critic(critic, s, np.zeros(512), 1, targets, K=K, M=64, rng=np.random.default_rng(1))
    return critic, s, targets


def test_l1_regression_fits_a_sine():
    critic, s, targets = _regress(1.0)
    assert np.mean(np.abs(critic.value(s, 0, 1) - targets)) < 0.05


def test_l1_regression_scales_with_the_targets():
    # the larger-scale fit needs more Adam steps to cover its range
    base, s, _ = _regress(1.0, K=4000)
    big, _, _ = _regress(10.0, K=4000)
    v1, v10 = base.value(s, 0, 1), big.value(s, 0, 1)
    assert np.linalg.norm(v10 - 10 * v1) / np.linalg.norm(10 * v1) < 0.05


def test_small_batches_are_sampled_with_replacement():
    critic = Critic(1, hidden=(3,), seed=0)
    loss = train_critic(critic, np.zeros((2, 1)), [0, 1], 2, [1.0, 2.0], K=3, M=16,
                        rng=np.random.default_rng(0))
    assert np.isfinite(loss)
