"""Policy updates: vanilla policy gradient, PPO (clipped surrogate), PPO-CMA."""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, fields, replace

import numpy as np

from .critic import Critic, batch_gae, train_critic
from .policy import LOG_2PI, GaussianPolicy

MODES = ("vanilla-pg", "ppo-clip", "ppo-cma", "ppo-cma-no-mirror", "ppo-cma-single-net")
CMA_MODES = ("ppo-cma", "ppo-cma-no-mirror", "ppo-cma-single-net")
# modes whose policy uses one network for both mean and variance
SHARED_NET_MODES = ("vanilla-pg", "ppo-clip", "ppo-cma-single-net")


@dataclass
class AlgoConfig:
    N: int = 8000
    T: int | None = None
    gamma: float = 0.99
    lam: float = 0.95
    K: int = 100
    M: int = 512
    H: int = 9
    epsilon: float = 0.2
    w_entropy: float = 0.0
    mode: str = "ppo-cma"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        for name in ("K", "M", "H", "N"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.T is not None and self.N < self.T:
            warnings.warn(f"N={self.N} is below the episode cap T={self.T}", stacklevel=2)


@dataclass
class ProcessedBatch:
    """Training samples with per-sample weights and the generating distribution."""
    states: np.ndarray
    actions: np.ndarray
    weights: np.ndarray
    gen_mean: np.ndarray
    gen_var: np.ndarray
    old_logp: np.ndarray

    def __post_init__(self):
        n = len(self.weights)
        for f in fields(self):
            if len(getattr(self, f.name)) != n:
                raise ValueError(f"field {f.name} has length {len(getattr(self, f.name))}, expected {n}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("non-finite weights")

    def __len__(self):
        return len(self.weights)

    def take(self, idx) -> "ProcessedBatch":
        return ProcessedBatch(*(getattr(self, f.name)[idx] for f in fields(self)))

    @classmethod
    def concat(cls, batches) -> "ProcessedBatch":
        batches = list(batches)
        return cls(*(np.concatenate([getattr(b, f.name) for b in batches]) for f in fields(cls)))


def batch_from_trajectories(trajs, advantages) -> ProcessedBatch:
    return ProcessedBatch(
        states=np.concatenate([t.obs for t in trajs]),
        actions=np.concatenate([t.actions for t in trajs]),
        weights=np.asarray(advantages, dtype=float),
        gen_mean=np.concatenate([t.gen_mean for t in trajs]),
        gen_var=np.concatenate([t.gen_var for t in trajs]),
        old_logp=np.concatenate([t.logp for t in trajs]),
    )


def clip_negative_advantages(batch: ProcessedBatch) -> ProcessedBatch:
    return replace(batch, weights=np.maximum(batch.weights, 0.0))


def mirror_kernel(actions, mean, var):
    """Unnormalized Gaussian kernel with the policy's shape; equals 1 at the mean."""
    d = np.asarray(actions) - mean
    return np.exp(-0.5 * np.sum(d * d / var, axis=-1))


def mirror_negative_advantages(batch: ProcessedBatch) -> ProcessedBatch:
    """Reflect negative-advantage actions about the generating mean.

    A sample with advantage ``A < 0`` becomes ``a' = 2 mu - a`` with weight
    ``-A * psi(a)``; other samples keep weight ``A``.
    """
    if np.any(batch.gen_var <= 0):
        raise ValueError("generating variances must be positive")
    neg = batch.weights < 0
    actions = batch.actions.copy()
    actions[neg] = 2.0 * batch.gen_mean[neg] - batch.actions[neg]
    psi = mirror_kernel(batch.actions, batch.gen_mean, batch.gen_var)
    weights = np.where(neg, -batch.weights * psi, batch.weights)
    return replace(batch, actions=actions, weights=weights)


class HistoryBuffer:
    """The last ``capacity`` iterations of processed batches, oldest evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("history capacity must be >= 1")
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def push(self, iteration: int, batch: ProcessedBatch):
        self._items.append((iteration, batch))

    def __len__(self):
        return len(self._items)

    @property
    def iterations(self):
        return [it for it, _ in self._items]

    @property
    def batches(self):
        return [b for _, b in self._items]

    def all_samples(self) -> ProcessedBatch:
        return ProcessedBatch.concat(self.batches)

    @property
    def n_samples(self) -> int:
        return sum(len(b) for b in self.batches)


# -- losses -------------------------------------------------------------------

def clipped_surrogate_loss(policy: GaussianPolicy, batch: ProcessedBatch,
                           epsilon: float, w_entropy: float = 0.0):
    """PPO clipped surrogate with an entropy bonus; ``batch.weights`` are signed advantages."""
    m = len(batch)
    if m == 0:
        raise ValueError("empty batch")
    mu, v, backprop = policy.forward_with_backprop(batch.states)
    c = np.exp(v)
    d = batch.actions - mu
    logp = np.sum(-0.5 * d * d / c - 0.5 * v - 0.5 * LOG_2PI, axis=1)
    ratio = np.exp(logp - batch.old_logp)
    adv = batch.weights
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv
    objective = np.minimum(unclipped, clipped)
    entropy = 0.5 * np.sum(np.log(2 * np.pi * np.e) + v, axis=1)
    loss = float(-np.mean(objective) - w_entropy * np.mean(entropy))
    # gradient flows only where the unclipped term is the minimum
    coef = np.where(unclipped <= clipped, ratio * adv, 0.0)[:, None]
    g_mu = -coef * d / c / m
    g_v = -coef * 0.5 * (d * d / c - 1.0) / m - 0.5 * w_entropy / m
    return loss, backprop(g_mu, g_v, "joint")


def _minibatch(batch: ProcessedBatch, M: int, rng) -> ProcessedBatch:
    return batch.take(rng.integers(0, len(batch), size=M))


def _fit(policy, batch, phase, K, M, rng):
    losses = []
    for _ in range(K):
        mb = _minibatch(batch, M, rng)
        loss, grads = policy.gaussian_loss(mb.states, mb.actions, mb.weights, phase)
        policy.apply_gradients(grads, phase)
        losses.append(loss)
    return float(np.mean(losses))


# -- critic + advantages --------------------------------------------------------

def critic_and_advantages(critic: Critic, trajs, config: AlgoConfig, rng):
    """Train the critic, then estimate advantages with the updated critic.

    Critic targets are GAE advantages plus values, both from the critic as it
    was before this iteration.  Returns ``(advantages, critic_loss)``.
    """
    adv_old, v_old = batch_gae(trajs, critic, config.gamma, config.lam)
    targets = adv_old + v_old
    states = np.concatenate([t.obs for t in trajs])
    times = np.concatenate([t.timesteps for t in trajs])
    caps = np.concatenate([np.full(len(t), t.T) for t in trajs])
    critic_loss = train_critic(critic, states, times, caps, targets, config.K, config.M, rng)
    adv, _ = batch_gae(trajs, critic, config.gamma, config.lam)
    return adv, critic_loss


def _policy_stats(batch: ProcessedBatch, advantages):
    sigma = np.sqrt(batch.gen_var)
    return {
        "mean_sigma": float(np.mean(sigma)),
        "max_sigma": float(np.max(sigma)),
        "mean_mu_norm": float(np.mean(np.linalg.norm(batch.gen_mean, axis=1))),
        "frac_positive_adv": float(np.mean(advantages > 0)),
    }


# -- iteration updates ----------------------------------------------------------

def vanilla_pg_update(policy: GaussianPolicy, batch: ProcessedBatch, K: int, M: int, rng,
                      trace=None):
    """K minibatch steps on the Gaussian loss with signed weights, all outputs trained.

    ``trace``, if given, is called with the step index after every step.
    """
    losses = []
    for k in range(K):
        mb = _minibatch(batch, M, rng)
        loss, grads = policy.gaussian_loss(mb.states, mb.actions, mb.weights, "joint")
        policy.apply_gradients(grads, "joint")
        losses.append(loss)
        if trace is not None:
            trace(k + 1)
    return float(np.mean(losses)) if losses else 0.0


def vanilla_pg_iteration(policy, critic, trajs, config: AlgoConfig, rng, trace=None):
    if not trajs:
        raise ValueError("empty experience")
    adv, critic_loss = critic_and_advantages(critic, trajs, config, rng)
    batch = batch_from_trajectories(trajs, adv)
    policy_loss = vanilla_pg_update(policy, batch, config.K, config.M, rng, trace=trace)
    return {**_policy_stats(batch, adv), "critic_loss": critic_loss, "policy_loss": policy_loss,
            "advantages": adv}


def ppo_iteration(policy, critic, trajs, config: AlgoConfig, rng):
    """Critic update, GAE, then K minibatch steps on the clipped surrogate."""
    if not trajs:
        raise ValueError("empty experience")
    adv, critic_loss = critic_and_advantages(critic, trajs, config, rng)
    batch = batch_from_trajectories(trajs, adv)
    losses = []
    for _ in range(config.K):
        mb = _minibatch(batch, config.M, rng)
        loss, grads = clipped_surrogate_loss(policy, mb, config.epsilon, config.w_entropy)
        policy.apply_gradients(grads, "joint")
        losses.append(loss)
    return {**_policy_stats(batch, adv), "critic_loss": critic_loss,
            "policy_loss": float(np.mean(losses)), "advantages": adv}


def ppo_cma_iteration(policy, critic, history: HistoryBuffer, trajs, config: AlgoConfig,
                      rng, iteration: int):
    """One PPO-CMA update on freshly collected trajectories.

    Critic first, then advantages, then negative advantages are mirrored (or
    clipped in the ablations) and the batch joins the history.  The variance
    network is fitted on the whole history before the mean network is fitted
    on this iteration's batch alone.
    """
    if not trajs:
        raise ValueError("empty experience")
    adv, critic_loss = critic_and_advantages(critic, trajs, config, rng)
    raw = batch_from_trajectories(trajs, adv)
    if config.mode == "ppo-cma":
        batch = mirror_negative_advantages(raw)
    else:
        batch = clip_negative_advantages(raw)
    assert np.all(batch.weights >= 0), "PPO-CMA training weights must be non-negative"
    history.push(iteration, batch)

    if policy.shared:
        policy_loss = _fit(policy, batch, "joint", config.K, config.M, rng)
        var_loss = np.nan
    else:
        var_loss = _fit(policy, history.all_samples(), "var", config.K, config.M, rng)
        policy_loss = _fit(policy, batch, "mean", config.K, config.M, rng)
    return {**_policy_stats(raw, adv), "critic_loss": critic_loss,
            "policy_loss": policy_loss, "var_loss": var_loss, "advantages": adv}
