import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppocma.algorithms import (AlgoConfig, HistoryBuffer, ProcessedBatch, clip_negative_advantages,
                               clipped_surrogate_loss, mirror_kernel, mirror_negative_advantages,
                               ppo_cma_iteration, vanilla_pg_update)
from ppocma.critic import Critic, End, Trajectory
from ppocma.policy import ActionBounds, GaussianPolicy, gaussian_log_density
from conftest import central_diff, rel_err


def make_batch(weights, actions=None, mean=None, var=None, states=None):
    w = np.asarray(weights, float)
    n = len(w)
    a = np.zeros((n, 2)) if actions is None else np.asarray(actions, float)
    mu = np.zeros_like(a) if mean is None else np.asarray(mean, float)
    c = np.ones_like(a) if var is None else np.asarray(var, float)
    s = np.zeros((n, 1)) if states is None else states
    return ProcessedBatch(s, a, w, mu, c, gaussian_log_density(a, mu, c))


def test_clip_examples():
    assert clip_negative_advantages(make_batch([-2, 0, 3])).weights.tolist() == [0, 0, 3]
    assert np.all(clip_negative_advantages(make_batch([-1, -5])).weights == 0)
    assert clip_negative_advantages(make_batch([1, 2.5])).weights.tolist() == [1, 2.5]


def test_mirror_hand_example():
    b = mirror_negative_advantages(make_batch([-1.0], actions=[[0.4, -0.2]]))
    assert np.allclose(b.actions, [[-0.4, 0.2]])
    assert b.weights[0] == pytest.approx(np.exp(-0.5 * 0.2))
    assert b.weights[0] == pytest.approx(0.9048, abs=1e-4)


def test_mirror_at_the_mean():
    b = mirror_negative_advantages(make_batch([-1.0], actions=[[0.3, 0.1]], mean=[[0.3, 0.1]]))
    assert np.allclose(b.actions, [[0.3, 0.1]]) and b.weights[0] == 1.0


def test_mirror_passes_nonnegative_samples_through():
    raw = make_batch([0.0, 2.0], actions=[[1, 2], [3, 4]])
    b = mirror_negative_advantages(raw)
    assert np.array_equal(b.actions, raw.actions) and np.array_equal(b.weights, raw.weights)
    assert np.array_equal(b.weights, clip_negative_advantages(raw).weights)


def test_mirror_rejects_nonpositive_variance():
    with np.errstate(divide="ignore", invalid="ignore"), pytest.raises(ValueError):
        mirror_negative_advantages(make_batch([-1.0], var=[[0.0, 1.0]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_mirror_properties(seed):
    r = np.random.default_rng(seed)
    n = 200
    mu = r.normal(size=(n, 2))
    c = np.exp(r.normal(size=(n, 2)))
    a = mu + np.sqrt(c) * r.normal(scale=2, size=(n, 2))
    A = r.normal(size=n)
    raw = make_batch(A, a, mu, c)
    b = mirror_negative_advantages(raw)
    psi = mirror_kernel(a, mu, c)
    assert len(b) == n
    assert np.all(b.weights >= 0) and np.all(np.isfinite(b.weights))
    assert np.all(psi > 0) and np.all(psi <= 1)
    twice = mirror_negative_advantages(make_batch(-np.abs(A), b.actions, mu, c))
    neg = A < 0
    assert np.allclose(twice.actions[neg], a[neg], atol=1e-12)


def test_mirror_property_at_scale():
    # the acceptance-size check also runs in test_acceptance; this keeps a quick copy here
    r = np.random.default_rng(0)
    a = r.normal(size=(10_000, 2))
    b = mirror_negative_advantages(make_batch(-np.ones(10_000), a, a, np.ones_like(a)))
    assert np.all(b.weights == 1.0)


def test_history_keeps_the_last_h_iterations():
    h = HistoryBuffer(3)
    for i in range(1, 8):
        h.push(i, make_batch(np.full(i, float(i))))
        assert h.iterations == list(range(max(1, i - 2), i + 1))
        assert len(h) <= 3
    assert h.n_samples == 5 + 6 + 7
    assert len(h.all_samples()) == 18
    with pytest.raises(ValueError):
        HistoryBuffer(0)


def test_processed_batch_validation():
    with pytest.raises(ValueError):
        ProcessedBatch(np.zeros((2, 1)), np.zeros((3, 2)), np.zeros(2), np.zeros((2, 2)),
                       np.ones((2, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        make_batch([np.inf])


def test_algo_config_validation():
    with pytest.raises(ValueError):
        AlgoConfig(mode="trpo")
    with pytest.raises(ValueError):
        AlgoConfig(K=0)
    with pytest.warns(UserWarning):
        AlgoConfig(N=10, T=100)


def surrogate_batch(ratio, adv, pol):
    s = np.zeros((len(adv), 1))
    a = np.zeros((len(adv), 2))
    mu, c = pol.mean_and_var(s)
    logp = gaussian_log_density(a, mu, c)
    return ProcessedBatch(s, a, np.asarray(adv, float), mu, c, logp - np.log(ratio))


@pytest.fixture
def small_policy():
    return GaussianPolicy(1, ActionBounds.box(-1, 1, 2), hidden=(4,), shared=True, seed=0)


def test_surrogate_fresh_policy(small_policy):
    adv = np.array([1.0, -2.0, 0.5])
    loss, _ = clipped_surrogate_loss(small_policy, surrogate_batch(np.ones(3), adv, small_policy), 0.2)
    assert loss == pytest.approx(-adv.mean())


@pytest.mark.parametrize("ratio, adv, objective", [(2.0, 1.0, 1.2), (0.5, -1.0, -0.8)])
def test_surrogate_clip_binds(small_policy, ratio, adv, objective):
    loss, _ = clipped_surrogate_loss(small_policy, surrogate_batch([ratio], [adv], small_policy), 0.2)
    assert -loss == pytest.approx(objective)


def test_surrogate_entropy_term(small_policy):
    b = surrogate_batch(np.ones(2), [0.0, 0.0], small_policy)
    loss, _ = clipped_surrogate_loss(small_policy, b, 0.2, w_entropy=0.1)
    assert loss == pytest.approx(-0.1 * small_policy.entropy(b.states).mean())


def test_surrogate_gradient_matches_finite_differences():
    for seed in range(20):
        r = np.random.default_rng(seed)
        pol = GaussianPolicy(2, ActionBounds.box(-1, 1, 2), hidden=(5,), shared=True, seed=seed)
        s = r.normal(size=(6, 2))
        a, mu, c = pol.sample(s, r, return_dist=True)
        # old log-probs far enough from current ones that some samples clip
        old = gaussian_log_density(a, mu, c) + r.normal(scale=0.3, size=6)
        b = ProcessedBatch(s, a, r.normal(size=6), mu, c, old)
        _, g = clipped_surrogate_loss(pol, b, 0.2, w_entropy=0.05)
        net = pol.nets["shared"]
        fd = central_diff(lambda: clipped_surrogate_loss(pol, b, 0.2, 0.05)[0], net.params)
        assert rel_err(g["shared"], fd) < 1e-4


def test_unbounded_epsilon_is_the_importance_weighted_gradient(rng):
    pol = GaussianPolicy(2, ActionBounds.box(-1, 1, 2), hidden=(5,), shared=True, seed=3)
    s = rng.normal(size=(8, 2))
    a, mu, c = pol.sample(s, rng, return_dist=True)
    old = gaussian_log_density(a, mu, c) + rng.normal(scale=0.5, size=8)
    adv = rng.normal(size=8)
    _, g = clipped_surrogate_loss(pol, ProcessedBatch(s, a, adv, mu, c, old), 1e9)

    def is_objective():
        return -float(np.mean(np.exp(pol.log_prob(s, a) - old) * adv))
    fd = central_diff(is_objective, pol.nets["shared"].params)
    assert rel_err(g["shared"], fd) < 1e-4


def test_pg_moves_the_mean_onto_a_single_positive_sample():
    pol = GaussianPolicy(1, ActionBounds.box(-1, 1, 2), hidden=(16,), shared=True, seed=0)
    target = np.array([[0.4, -0.3]])
    b = make_batch([1.0], actions=target)
    vanilla_pg_update(pol, b, K=3000, M=1, rng=np.random.default_rng(0))
    mu, _ = pol.mean_and_var(np.zeros((1, 1)))
    assert np.allclose(mu, target, atol=1e-2)


def quadratic_trajs(pol, rng, n=32):
    s = np.zeros((n, 1))
    a, mu, c = pol.sample(s, rng, return_dist=True)
    r = -np.sum(a * a, axis=1)
    return [Trajectory(s[i:i + 1], a[i:i + 1], r[i:i + 1], s[i:i + 1], End.TERMINAL, 1,
                       mu[i:i + 1], c[i:i + 1], gaussian_log_density(a[i:i + 1], mu[i:i + 1], c[i:i + 1]))
            for i in range(n)]


def test_all_negative_advantages_without_mirroring_leave_the_policy_unchanged():
    pol = GaussianPolicy(1, ActionBounds.box(-1, 1, 2), hidden=(8,), seed=0)
    critic = Critic(1, hidden=(8,), seed=0)
    critic.net.biases[-1][:] = 100.0  # every return is far below the baseline
    before = {k: n.params.copy() for k, n in pol.nets.items()}
    cfg = AlgoConfig(N=32, K=10, M=8, H=3, gamma=0.0, mode="ppo-cma-no-mirror")
    stats = ppo_cma_iteration(pol, critic, HistoryBuffer(3), quadratic_trajs(pol, np.random.default_rng(0)),
                              cfg, np.random.default_rng(1), 1)
    assert stats["frac_positive_adv"] == 0.0
    for k, n in pol.nets.items():
        assert np.array_equal(before[k], n.params)


def test_mean_training_reads_only_the_current_iteration(monkeypatch):
    import ppocma.algorithms as alg
    seen = []
    real_fit = alg._fit

    def spy(policy, batch, phase, K, M, rng):
        seen.append((phase, len(batch)))
        return real_fit(policy, batch, phase, K, M, rng)
    monkeypatch.setattr(alg, "_fit", spy)
    pol = GaussianPolicy(1, ActionBounds.box(-1, 1, 2), hidden=(8,), seed=0)
    critic = Critic(1, hidden=(8,), seed=0)
    hist = HistoryBuffer(2)
    cfg = AlgoConfig(N=16, K=2, M=4, H=2, gamma=0.0, mode="ppo-cma")
    rng = np.random.default_rng(0)
    for it in range(1, 4):
        ppo_cma_iteration(pol, critic, hist, quadratic_trajs(pol, rng, 16), cfg, rng, it)
    assert seen == [("var", 16), ("mean", 16), ("var", 32), ("mean", 16), ("var", 32), ("mean", 16)]
    assert hist.iterations == [2, 3]


def test_training_weights_are_nonnegative_in_cma_modes(monkeypatch):
    pol = GaussianPolicy(1, ActionBounds.box(-1, 1, 2), hidden=(8,), seed=0)
    seen = []
    real = pol.gaussian_loss

    def spy(states, actions, weights, phase="mean"):
        seen.append(np.min(weights))
        return real(states, actions, weights, phase)
    monkeypatch.setattr(pol, "gaussian_loss", spy)
    critic = Critic(1, hidden=(8,), seed=0)
    cfg = AlgoConfig(N=32, K=5, M=8, H=3, gamma=0.0, mode="ppo-cma")
    ppo_cma_iteration(pol, critic, HistoryBuffer(3), quadratic_trajs(pol, np.random.default_rng(0)),
                      cfg, np.random.default_rng(1), 1)
    assert len(seen) == 10 and min(seen) >= 0.0


def test_empty_experience_is_rejected():
    pol = GaussianPolicy(1, ActionBounds.box(-1, 1, 2), hidden=(4,), seed=0)
    with pytest.raises(ValueError):
        ppo_cma_iteration(pol, Critic(1, hidden=(4,)), HistoryBuffer(1), [], AlgoConfig(), None, 1)
