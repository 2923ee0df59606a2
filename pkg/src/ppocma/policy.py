"""Diagonal Gaussian policy with soft-clipped mean and log-variance."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .nn import AdamState, Network, NetworkLayout, adam_step

LOG_2PI = np.log(2 * np.pi)
SIGMA_MIN = 0.01
# pretraining runs its own Adam; a larger step than training gets the fit
# tight over the whole observation distribution within 1000 steps
PRETRAIN_LEARNING_RATE = 2e-3
# Keeps sigmoid outputs strictly inside (0, 1) so clipped values never touch the limits.
_SIG_EPS = 1e-12

PHASES = ("mean", "var", "joint")


def _sigmoid(x):
    return np.clip(expit(x), _SIG_EPS, 1.0 - _SIG_EPS)


@dataclass(frozen=True)
class ActionBounds:
    a_min: np.ndarray
    a_max: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.a_min, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.a_max, dtype=np.float64))
        if lo.shape != hi.shape:
            raise ValueError("a_min and a_max must have the same shape")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
            raise ValueError("action bounds must be finite with a_min < a_max")
        object.__setattr__(self, "a_min", lo)
        object.__setattr__(self, "a_max", hi)

    @classmethod
    def box(cls, low: float, high: float, dim: int) -> "ActionBounds":
        return cls(np.full(dim, low, dtype=float), np.full(dim, high, dtype=float))

    @property
    def dim(self) -> int:
        return self.a_min.size

    @property
    def width(self) -> np.ndarray:
        return self.a_max - self.a_min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.a_max + self.a_min)


@dataclass(frozen=True)
class VarianceLimits:
    """Log-variance limits: v_min from a fixed std floor, v_max from the action range."""
    v_min: np.ndarray
    v_max: np.ndarray

    @classmethod
    def from_bounds(cls, bounds: ActionBounds, sigma_min: float = SIGMA_MIN) -> "VarianceLimits":
        v_max = 2.0 * np.log(bounds.width)
        v_min = np.full_like(v_max, 2.0 * np.log(sigma_min))
        if np.any(v_min >= v_max):
            raise ValueError("sigma_min must be smaller than the action range")
        return cls(v_min, v_max)


class GaussianPolicy:
    """Gaussian policy with state-dependent mean and diagonal covariance.

    By default the mean and log-variance come from two separate networks, so
    they can be trained in separate passes.  With ``shared=True`` a single
    network emits ``2 * action_dim`` outputs (mean block first); that is the
    layout used by plain PPO, vanilla policy gradient and the single-network
    ablation.
    """

    def __init__(self, obs_dim: int, bounds: ActionBounds, hidden=(128, 128),
                 shared: bool = False, seed=0, learning_rate: float = 3e-4):
        self.obs_dim = int(obs_dim)
        self.bounds = bounds
        self.vlimits = VarianceLimits.from_bounds(bounds)
        self.shared = shared
        self.learning_rate = learning_rate
        d = bounds.dim
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        s_mean, s_var = ss.spawn(2)
        if shared:
            self.nets = {"shared": Network.init(NetworkLayout(obs_dim, hidden, 2 * d), s_mean)}
        else:
            self.nets = {
                "mean": Network.init(NetworkLayout(obs_dim, hidden, d), s_mean),
                "var": Network.init(NetworkLayout(obs_dim, hidden, d), s_var),
            }
        self.reset_optimizers()

    def reset_optimizers(self):
        self.optimizers = {k: AdamState.for_network(n, self.learning_rate)
                           for k, n in self.nets.items()}

    @property
    def action_dim(self) -> int:
        return self.bounds.dim

    # -- forward -------------------------------------------------------------

    def _raw(self, states):
        """Raw network outputs plus caches for backprop."""
        if self.shared:
            out, cache = self.nets["shared"].forward_cached(states)
            d = self.action_dim
            return out[:, :d], out[:, d:], {"shared": cache}
        mu_raw, c_mean = self.nets["mean"].forward_cached(states)
        v_raw, c_var = self.nets["var"].forward_cached(states)
        return mu_raw, v_raw, {"mean": c_mean, "var": c_var}

    def _clip(self, mu_raw, v_raw):
        s_mu = _sigmoid(mu_raw)
        s_v = _sigmoid(v_raw)
        b, vl = self.bounds, self.vlimits
        mu = b.a_min + b.width * s_mu
        v = vl.v_min + (vl.v_max - vl.v_min) * s_v
        # d(clipped)/d(raw), needed by every loss
        dmu = b.width * s_mu * (1.0 - s_mu)
        dv = (vl.v_max - vl.v_min) * s_v * (1.0 - s_v)
        return mu, v, dmu, dv

    def mean_and_var(self, states):
        """Clipped mean and variance ``c = exp(v_clipped)`` for a batch of states."""
        mu_raw, v_raw, _ = self._raw(states)
        mu, v, _, _ = self._clip(mu_raw, v_raw)
        return mu, np.exp(v)

    def sample(self, states, rng, return_dist=False):
        """Draw ``a = mu + sqrt(c) * z``.  Actions are not clamped to the bounds."""
        mu, c = self.mean_and_var(states)
        a = mu + np.sqrt(c) * rng.standard_normal(mu.shape)
        if return_dist:
            return a, mu, c
        return a

    def log_prob(self, states, actions):
        mu, c = self.mean_and_var(states)
        return gaussian_log_density(actions, mu, c)

    def entropy(self, states):
        _, c = self.mean_and_var(states)
        return 0.5 * np.sum(np.log(2 * np.pi * np.e * c), axis=1)

    # -- gradients -----------------------------------------------------------

    def forward_with_backprop(self, states):
        """Clipped mean and log-variance plus a closure mapping
        ``(dL/dmu, dL/dv, phase)`` to per-network parameter gradients."""
        mu_raw, v_raw, caches = self._raw(states)
        mu, v, dmu, dv = self._clip(mu_raw, v_raw)

        def backprop(g_mu, g_v, phase="joint"):
            return self._backprop(caches, g_mu, g_v, dmu, dv, phase)
        return mu, v, backprop

    def _backprop(self, caches, g_mu, g_v, dmu, dv, active):
        """Turn dL/d(mu_clipped), dL/d(v_clipped) into per-network gradients.

        ``active`` selects which output blocks carry gradient: "mean", "var" or
        "joint".  Networks that receive no gradient get an all-zero vector.
        """
        g_mu_raw = g_mu * dmu if active in ("mean", "joint") else np.zeros_like(g_mu)
        g_v_raw = g_v * dv if active in ("var", "joint") else np.zeros_like(g_v)
        if self.shared:
            g = np.concatenate([g_mu_raw, g_v_raw], axis=1)
            return {"shared": self.nets["shared"].backward(None, g, caches["shared"])}
        grads = {}
        for name, g in (("mean", g_mu_raw), ("var", g_v_raw)):
            if active in (name, "joint"):
                grads[name] = self.nets[name].backward(None, g, caches[name])
            else:
                grads[name] = np.zeros(self.nets[name].n_params)
        return grads

    def gaussian_loss(self, states, actions, weights, phase="mean"):
        """Advantage-weighted Gaussian fitting loss and its gradients.

        Per sample and action dimension the loss term is
        ``0.5 * (a - mu)^2 / c + 0.5 * log c``, i.e. the negative log density
        without its constant, weighted by the sample weight and averaged over
        the batch.  With nonnegative weights the variance-phase optimum is the
        weighted variance of the actions.  ``phase="mean"`` differentiates only through
        the mean, ``"var"`` only through the variance, ``"joint"`` through both.
        Returns ``(loss, grads)`` with ``grads`` keyed by network name.
        """
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        weights = np.asarray(weights, dtype=np.float64)
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        m = weights.shape[0]
        if m == 0:
            raise ValueError("empty batch")
        if not np.all(np.isfinite(weights)):
            raise ValueError("non-finite sample weights")
        mu, v, backprop = self.forward_with_backprop(states)
        inv_c = np.exp(-v)
        diff = actions - mu
        w = weights[:, None]
        sq = diff * diff * inv_c
        loss = float(0.5 * np.sum(w * (sq + v)) / m)
        g_mu = w * (-diff * inv_c) / m
        g_v = 0.5 * w * (1.0 - sq) / m
        return loss, backprop(g_mu, g_v, phase)

    def pretrain_loss(self, states, mean_target, v_target):
        """Squared error of the clipped outputs against fixed targets (mean over the batch)."""
        mu_raw, v_raw, caches = self._raw(states)
        mu, v, dmu, dv = self._clip(mu_raw, v_raw)
        m = mu.shape[0]
        e_mu = mu - mean_target
        e_v = v - v_target
        loss = float((np.sum(e_mu ** 2) + np.sum(e_v ** 2)) / m)
        return loss, self._backprop(caches, 2 * e_mu / m, 2 * e_v / m, dmu, dv, "joint")

    def trained_networks(self, phase):
        if self.shared:
            return ["shared"]
        return ["mean", "var"] if phase == "joint" else [phase]

    def apply_gradients(self, grads, phase="joint"):
        # frozen networks must not be stepped: Adam momentum would still move them
        for name in self.trained_networks(phase):
            adam_step(self.nets[name], grads[name], self.optimizers[name])

    # -- checkpoints ---------------------------------------------------------

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        for name, net in self.nets.items():
            net.save(os.path.join(directory, f"{name}_net.npz"))
        meta = {
            "obs_dim": self.obs_dim,
            "shared": self.shared,
            "a_min": self.bounds.a_min.tolist(),
            "a_max": self.bounds.a_max.tolist(),
            "v_min": self.vlimits.v_min.tolist(),
            "v_max": self.vlimits.v_max.tolist(),
            "learning_rate": self.learning_rate,
        }
        tmp = os.path.join(directory, "policy.json.tmp")
        with open(tmp, "w") as f:
            json.dump(meta, f, indent=2)
        os.replace(tmp, os.path.join(directory, "policy.json"))

    @classmethod
    def load(cls, directory) -> "GaussianPolicy":
        with open(os.path.join(directory, "policy.json")) as f:
            meta = json.load(f)
        bounds = ActionBounds(np.array(meta["a_min"]), np.array(meta["a_max"]))
        names = ["shared"] if meta["shared"] else ["mean", "var"]
        nets = {n: Network.load(os.path.join(directory, f"{n}_net.npz")) for n in names}
        hidden = next(iter(nets.values())).layout.hidden_widths
        policy = cls(meta["obs_dim"], bounds, hidden=hidden, shared=meta["shared"],
                     learning_rate=meta["learning_rate"])
        policy.nets = nets
        policy.reset_optimizers()
        return policy


def gaussian_log_density(actions, mu, c):
    """Log-density of a diagonal Gaussian, summed over action dimensions."""
    diff = np.asarray(actions) - mu
    return np.sum(-0.5 * diff * diff / c - 0.5 * np.log(c) - 0.5 * LOG_2PI, axis=-1)


def pretrain(policy: GaussianPolicy, rng, steps: int = 1000, batch_size: int = 128,
             mean_target=None, std_target=None,
             learning_rate: float = PRETRAIN_LEARNING_RATE):
    """Regress the policy onto a state-independent initial Gaussian.

    Default targets put the mean at the center of the action box and the
    standard deviation at half its width.  Observations are drawn from a
    standard normal.  A fresh Adam state is used and discarded afterwards.
    """
    b = policy.bounds
    mu_t = b.center if mean_target is None else np.broadcast_to(
        np.asarray(mean_target, dtype=float), b.a_min.shape)
    sd_t = 0.5 * b.width if std_target is None else np.broadcast_to(
        np.asarray(std_target, dtype=float), b.a_min.shape)
    v_t = 2.0 * np.log(sd_t)
    opt = {k: AdamState.for_network(n, learning_rate) for k, n in policy.nets.items()}
    loss = np.nan
    for _ in range(steps):
        states = rng.standard_normal((batch_size, policy.obs_dim))
        loss, grads = policy.pretrain_loss(states, mu_t, v_t)
        for name, g in grads.items():
            adam_step(policy.nets[name], g, opt[name])
    return loss
