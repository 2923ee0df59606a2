"""In-repo environments, observation normalizer, and action repeat."""
from __future__ import annotations

import math

import numpy as np

from .critic import End
from .policy import ActionBounds

DEFAULT_EPISODE_CAP = 1000


class Env:
    """Episodic environment.  ``reset`` must precede ``step``."""

    obs_dim: int
    action_dim: int
    bounds: ActionBounds
    T: int = DEFAULT_EPISODE_CAP

    def __init__(self):
        self.t = 0
        self._done = True

    def reset(self, rng) -> np.ndarray:
        self.t = 0
        self._done = False
        return self._reset(rng)

    def step(self, action):
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        action = np.asarray(action, dtype=float)
        if action.shape != (self.action_dim,):
            raise ValueError(f"action must have shape ({self.action_dim},)")
        if not np.all(np.isfinite(action)):
            raise ValueError("non-finite action")
        obs, reward, end = self._step(action)
        self.t += 1
        if end is End.NONE and self.t >= self.T:
            end = End.TIMEOUT
        self._done = end is not End.NONE
        return obs, float(reward), end

    def _reset(self, rng):
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError


class QuadraticEnv(Env):
    """One-step, state-agnostic problem with reward ``-a.a``.

    The reward uses the action as sampled, without clamping to the bounds.
    """

    obs_dim = 1
    action_dim = 2
    T = 1

    def __init__(self):
        super().__init__()
        self.bounds = ActionBounds.box(-1.0, 1.0, 2)

    def _reset(self, rng):
        return np.zeros(1)

    def _step(self, action):
        return np.zeros(1), -float(action @ action), End.TERMINAL


class PointMassEnv(Env):
    """Damped 2D point mass that must reach a random target.

    Observation is ``[position, velocity, target]``; reward is the negative
    squared distance to the target after each step.
    """

    obs_dim = 6
    action_dim = 2

    def __init__(self, dt=0.05, damping=0.1, T=100):
        super().__init__()
        self.dt = dt
        self.damping = damping
        self.T = T
        self.bounds = ActionBounds.box(-1.0, 1.0, 2)
        self.position = np.zeros(2)
        self.velocity = np.zeros(2)
        self.target = np.zeros(2)

    def _obs(self):
        return np.concatenate([self.position, self.velocity, self.target])

    def _reset(self, rng):
        self.position = np.zeros(2)
        self.velocity = np.zeros(2)
        self.target = rng.uniform(-1.0, 1.0, size=2)
        return self._obs()

    def _step(self, action):
        a = np.clip(action, self.bounds.a_min, self.bounds.a_max)
        self.velocity = (1.0 - self.damping) * self.velocity + self.dt * a
        self.position = self.position + self.dt * self.velocity
        d = self.position - self.target
        return self._obs(), -float(d @ d), End.NONE


class ActionRepeat(Env):
    """Applies each action ``factor`` times (or until the episode ends), summing rewards."""

    def __init__(self, env: Env, factor: int = 2):
        if factor < 1:
            raise ValueError("action repeat factor must be >= 1")
        super().__init__()
        self.env = env
        self.factor = factor
        self.obs_dim = env.obs_dim
        self.action_dim = env.action_dim
        self.bounds = env.bounds
        self.T = math.ceil(env.T / factor)

    def _reset(self, rng):
        return self.env.reset(rng)

    def _step(self, action):
        total = 0.0
        for _ in range(self.factor):
            obs, r, end = self.env.step(action)
            total += r
            if end is not End.NONE:
                # the wrapper's own cap is ceil(T/factor), so an inner timeout maps onto it
                return obs, total, end
        return obs, total, End.NONE


ENVS = {
    "quadratic": QuadraticEnv,
    "pointmass": PointMassEnv,
}


def make_env(name: str, action_repeat: int = 1, T: int | None = None) -> Env:
    """Build a named environment, optionally overriding its episode cap and
    wrapping it in an action repeat."""
    if name not in ENVS:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVS)}")
    if T is None:
        env = ENVS[name]()
    elif name == "quadratic":
        if T != 1:
            raise ValueError("the quadratic problem has a fixed episode length of 1")
        env = QuadraticEnv()
    else:
        env = ENVS[name](T=T)
    if action_repeat > 1:
        env = ActionRepeat(env, action_repeat)
    return env


class ObsNormalizer:
    """Per-dimension observation scaling that only ever shrinks.

    After each iteration the scale becomes ``min(k_prev, 1 / (rms + kappa))``,
    where ``rms`` is the root mean square of every raw observation seen so far.
    The first update sets the scale directly.
    """

    def __init__(self, dim: int, kappa: float = 0.001):
        self.dim = dim
        self.kappa = kappa
        self.sum_sq = np.zeros(dim)
        self.count = 0
        self.k = None

    @property
    def initialized(self) -> bool:
        return self.k is not None

    def update(self, raw_obs):
        raw_obs = np.atleast_2d(np.asarray(raw_obs, dtype=float))
        if raw_obs.shape[0] == 0:
            raise ValueError("normalizer update needs at least one observation")
        self.sum_sq += np.sum(raw_obs ** 2, axis=0)
        self.count += raw_obs.shape[0]
        rms = np.sqrt(self.sum_sq / self.count)
        k_new = 1.0 / (rms + self.kappa)
        self.k = k_new if self.k is None else np.minimum(self.k, k_new)
        return self

    def apply(self, raw_obs):
        if self.k is None:
            raise RuntimeError("normalizer has not been updated yet")
        return np.asarray(raw_obs, dtype=float) * self.k
