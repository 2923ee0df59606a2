"""Value network with an episode-time input, L1 training, and GAE."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .nn import AdamState, Network, NetworkLayout, adam_step


class End(enum.Enum):
    NONE = "none"
    TERMINAL = "terminal"
    TIMEOUT = "timeout"


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    end: End
    t: int


@dataclass
class Trajectory:
    """One episode, stored column-wise.

    ``obs[i]`` is the (normalized) observation at timestep ``i``; ``next_obs``
    is the successor.  Only the last step may end the episode, and ``end``
    says how.  ``gen_mean``, ``gen_var`` and ``logp`` record the policy
    distribution each action was drawn from.
    """
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    end: End
    T: int
    gen_mean: np.ndarray | None = None
    gen_var: np.ndarray | None = None
    logp: np.ndarray | None = None
    raw_obs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.rewards) == 0:
            raise ValueError("empty trajectory")
        if not isinstance(self.end, End):
            self.end = End(self.end)

    def __len__(self):
        return len(self.rewards)

    @property
    def timesteps(self) -> np.ndarray:
        return np.arange(len(self))

    @property
    def undiscounted_return(self) -> float:
        return float(np.sum(self.rewards))

    @classmethod
    def from_transitions(cls, transitions, T):
        transitions = list(transitions)
        if not transitions:
            raise ValueError("empty trajectory")
        for i, tr in enumerate(transitions):
            if tr.t != i:
                raise ValueError("timesteps must be consecutive from 0")
            if tr.end is not End.NONE and i != len(transitions) - 1:
                raise ValueError("only the last transition may end the episode")
        return cls(
            obs=np.array([tr.s for tr in transitions], dtype=float),
            actions=np.array([tr.a for tr in transitions], dtype=float),
            rewards=np.array([tr.r for tr in transitions], dtype=float),
            next_obs=np.array([tr.s_next for tr in transitions], dtype=float),
            end=transitions[-1].end,
            T=T,
        )

    def transitions(self):
        n = len(self)
        for i in range(n):
            yield Transition(self.obs[i], self.actions[i], float(self.rewards[i]),
                             self.next_obs[i], self.end if i == n - 1 else End.NONE, i)


def time_feature(t, T):
    if T <= 0:
        raise ValueError("episode cap T must be >= 1")
    return np.asarray(t, dtype=float) / T


class Critic:
    """State-value network; input is the observation plus ``t / T``."""

    def __init__(self, obs_dim: int, hidden=(128, 128), seed=0, learning_rate=3e-4):
        self.obs_dim = obs_dim
        self.net = Network.init(NetworkLayout(obs_dim + 1, hidden, 1), seed)
        self.adam = AdamState.for_network(self.net, learning_rate)

    def inputs(self, states, t, T):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        tf = np.broadcast_to(time_feature(t, T), (states.shape[0],))
        return np.column_stack([states, tf])

    def value(self, states, t, T) -> np.ndarray:
        return self.net.forward(self.inputs(states, t, T))[:, 0]

    def l1_loss(self, x, targets):
        """Mean absolute error and its gradient; the subgradient at 0 is 0."""
        pred, cache = self.net.forward_cached(x)
        err = pred[:, 0] - targets
        m = len(targets)
        grad = self.net.backward(None, (np.sign(err) / m)[:, None], cache)
        return float(np.mean(np.abs(err))), grad


def trajectory_values(traj: Trajectory, critic: Critic):
    """V(s_t) for every step and the bootstrap value of the final successor state."""
    v = critic.value(traj.obs, traj.timesteps, traj.T)
    if traj.end is End.TERMINAL:
        v_last = 0.0
    else:
        v_last = float(critic.value(traj.next_obs[-1:], len(traj), traj.T)[0])
    return v, v_last


def gae_from_values(rewards, values, bootstrap, gamma, lam):
    """Backward GAE recursion.  ``values[i]`` is V(s_i); ``bootstrap`` is V(s_n)
    (0 for a terminal end)."""
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("gamma and lambda must lie in [0, 1]")
    rewards = np.asarray(rewards, dtype=float)
    n = len(rewards)
    if n == 0:
        raise ValueError("empty trajectory")
    next_v = np.append(np.asarray(values[1:], dtype=float), bootstrap)
    deltas = rewards + gamma * next_v - values
    adv = np.empty(n)
    acc = 0.0
    for i in range(n - 1, -1, -1):
        acc = deltas[i] + gamma * lam * acc
        adv[i] = acc
    return adv


def compute_gae(traj: Trajectory, critic: Critic, gamma: float, lam: float):
    """GAE advantages for one episode.  Returns ``(advantages, values)``."""
    v, v_last = trajectory_values(traj, critic)
    return gae_from_values(traj.rewards, v, v_last, gamma, lam), v


def batch_gae(trajs, critic: Critic, gamma: float, lam: float):
    """``compute_gae`` over many trajectories with two batched critic passes.

    Returns concatenated ``(advantages, values)``.
    """
    lengths = [len(t) for t in trajs]
    states = np.concatenate([t.obs for t in trajs])
    tf = np.concatenate([t.timesteps / t.T for t in trajs])
    values = critic.value(states, tf, 1)
    boot_idx = [i for i, t in enumerate(trajs) if t.end is not End.TERMINAL]
    boot = np.zeros(len(trajs))
    if boot_idx:
        last = np.array([trajs[i].next_obs[-1] for i in boot_idx])
        t_last = np.array([len(trajs[i]) / trajs[i].T for i in boot_idx])
        boot[boot_idx] = critic.value(last, t_last, 1)
    adv = np.empty_like(values)
    start = 0
    for i, (t, n) in enumerate(zip(trajs, lengths)):
        sl = slice(start, start + n)
        adv[sl] = gae_from_values(t.rewards, values[sl], boot[i], gamma, lam)
        start += n
    return adv, values


def train_critic(critic: Critic, states, times, T, targets, K: int, M: int, rng):
    """K Adam steps of L1 regression on minibatches drawn with replacement.

    ``times`` are per-sample timesteps and ``T`` is the episode cap (scalar or
    per-sample).  Returns the mean minibatch loss.
    """
    x = critic.inputs(states, np.asarray(times, dtype=float) / np.asarray(T, dtype=float), 1)
    targets = np.asarray(targets, dtype=float)
    n = len(targets)
    losses = []
    for _ in range(K):
        idx = rng.integers(0, n, size=M)
        loss, grad = critic.l1_loss(x[idx], targets[idx])
        adam_step(critic.net, grad, critic.adam)
        losses.append(loss)
    return float(np.mean(losses)) if losses else 0.0
