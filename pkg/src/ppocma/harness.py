"""Experiment orchestration: collection, the training loop, artifacts, scoring, sweeps."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .algorithms import (SHARED_NET_MODES, AlgoConfig, HistoryBuffer, ppo_cma_iteration,
                         ppo_iteration, vanilla_pg_iteration)
from .critic import Critic, End, Trajectory
from .envs import ObsNormalizer, make_env
from .policy import GaussianPolicy, gaussian_log_density, pretrain

log = logging.getLogger(__name__)

STATS_COLUMNS = ["iteration", "env_steps", "mean_return", "mean_sigma", "max_sigma",
                 "mean_mu_norm", "frac_positive_adv", "critic_loss", "policy_loss",
                 "k_min", "k_max"]


@dataclass
class ExperimentConfig:
    env: str = "quadratic"
    mode: str = "ppo-cma"
    N: int = 8000
    T: int | None = None
    gamma: float = 0.99
    lam: float = 0.95
    K: int = 100
    M: int = 512
    H: int = 9
    epsilon: float = 0.2
    w_entropy: float = 0.0
    learning_rate: float = 3e-4
    hidden: tuple = (128, 128)
    action_repeat: int = 2
    total_steps: int = 1_000_000
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    log_every: int = 10
    pretrain_steps: int = 1000
    pretrain_batch: int = 128
    # optional override of the pretraining targets (center / half-width of the action box)
    init_mean: list | None = None
    init_std: list | None = None
    setting: str | None = None

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.seeds = list(self.seeds)
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.total_steps < self.N:
            raise ValueError("total_steps must be >= N")
        self.algo_config()  # validates mode and counts

    def algo_config(self) -> AlgoConfig:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return AlgoConfig(N=self.N, T=self.T, gamma=self.gamma, lam=self.lam, K=self.K,
                              M=self.M, H=self.H, epsilon=self.epsilon,
                              w_entropy=self.w_entropy, mode=self.mode)

    @property
    def setting_label(self) -> str:
        if self.setting:
            return self.setting
        if self.mode == "ppo-clip":
            return f"{self.mode}|N={self.N}|eps={self.epsilon}|w={self.w_entropy}|M={self.M}"
        return f"{self.mode}|N={self.N}|H={self.H}|M={self.M}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path, overrides=None) -> "ExperimentConfig":
        with open(path) as f:
            d = json.load(f)
        d.update(overrides or {})
        return cls.from_dict(d)


# -- io helpers ------------------------------------------------------------------

def atomic_write_text(path, text: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: _fmt(row.get(c)) for c in columns})
    return buf.getvalue()


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return ""
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


# -- experience collection ---------------------------------------------------------

def collect(make, policy: GaussianPolicy, obs_scale, N: int, env_rng, act_rng):
    """Run whole episodes until at least N steps have been taken.

    Episodes run in lockstep batches so the policy is queried once per
    timestep for all live episodes.  Each batch starts ``ceil(remaining / T)``
    episodes, so the total never reaches N + T.  Observations are scaled by
    ``obs_scale`` (frozen for the whole call); raw ones are kept for the
    normalizer.
    """
    trajs = []
    steps = 0
    while steps < N:
        probe = make()
        n = math.ceil((N - steps) / probe.T)
        envs = [probe] + [make() for _ in range(n - 1)]
        raw = [e.reset(env_rng) for e in envs]
        lanes = [{k: [] for k in ("raw", "act", "rew", "raw_next", "mu", "var")} for _ in envs]
        ends = [None] * n
        active = list(range(n))
        while active:
            x = np.array([raw[i] for i in active]) * obs_scale
            a, mu, c = policy.sample(x, act_rng, return_dist=True)
            for j, i in enumerate(active):
                nxt, r, end = envs[i].step(a[j])
                lane = lanes[i]
                lane["raw"].append(raw[i])
                lane["act"].append(a[j])
                lane["rew"].append(r)
                lane["raw_next"].append(nxt)
                lane["mu"].append(mu[j])
                lane["var"].append(c[j])
                raw[i] = nxt
                if end is not End.NONE:
                    ends[i] = end
            active = [i for i in active if ends[i] is None]
        for i, lane in enumerate(lanes):
            raw_obs = np.array(lane["raw"])
            acts = np.array(lane["act"])
            mu = np.array(lane["mu"])
            var = np.array(lane["var"])
            trajs.append(Trajectory(
                obs=raw_obs * obs_scale, actions=acts, rewards=np.array(lane["rew"]),
                next_obs=np.array(lane["raw_next"]) * obs_scale, end=ends[i], T=envs[i].T,
                gen_mean=mu, gen_var=var, logp=gaussian_log_density(acts, mu, var),
                raw_obs=raw_obs))
            steps += len(raw_obs)
    return trajs


# -- one run ---------------------------------------------------------------------------

@dataclass
class RunArtifacts:
    run_dir: str
    stats: list
    summary: dict


def _env_factory(config: ExperimentConfig):
    def make():
        return make_env(config.env, config.action_repeat, T=config.T)
    return make


def build_agent(config: ExperimentConfig, seed):
    """Fresh pretrained policy, critic, normalizer and rng streams for one seed."""
    ss = np.random.SeedSequence(seed)
    s_policy, s_critic, s_pre, s_env, s_act, s_train = ss.spawn(6)
    env = _env_factory(config)()
    policy = GaussianPolicy(env.obs_dim, env.bounds, hidden=config.hidden,
                            shared=config.mode in SHARED_NET_MODES, seed=s_policy,
                            learning_rate=config.learning_rate)
    pretrain(policy, np.random.default_rng(s_pre), steps=config.pretrain_steps,
             batch_size=config.pretrain_batch, mean_target=config.init_mean,
             std_target=config.init_std)
    critic = Critic(env.obs_dim, hidden=config.hidden, seed=s_critic,
                    learning_rate=config.learning_rate)
    rngs = {k: np.random.default_rng(s) for k, s in
            (("env", s_env), ("act", s_act), ("train", s_train))}
    return env, policy, critic, ObsNormalizer(env.obs_dim), rngs


def run_seed(config: ExperimentConfig, seed: int, run_dir=None, record_samples=None):
    """Train one seed.  Writes artifacts to ``run_dir`` if given.

    ``record_samples`` (default: on for the quadratic problem) keeps every
    sampled action and the policy mean/std per iteration for visualization.
    """
    algo = config.algo_config()
    make = _env_factory(config)
    env, policy, critic, normalizer, rngs = build_agent(config, seed)
    history = HistoryBuffer(algo.H)
    if record_samples is None:
        record_samples = config.env == "quadratic"
    samples, dists, pg_trace = [], [], []
    stats = []
    env_steps = 0
    iteration = 0
    last_returns = []
    while env_steps < config.total_steps:
        iteration += 1
        scale = normalizer.k if normalizer.initialized else np.ones(env.obs_dim)
        trajs = collect(make, policy, scale, algo.N, rngs["env"], rngs["act"])
        normalizer.update(np.concatenate([t.raw_obs for t in trajs]))
        env_steps += sum(len(t) for t in trajs)
        last_returns = [t.undiscounted_return for t in trajs]

        trace = None
        if record_samples and algo.mode == "vanilla-pg" and iteration == 1:
            probe = trajs[0].obs[:1]

            def trace(step, probe=probe):
                mu, c = policy.mean_and_var(probe)
                pg_trace.append({"step": step, **_mu_sigma_row(mu[0], np.sqrt(c[0]))})
            trace(0)

        if algo.mode == "vanilla-pg":
            st = vanilla_pg_iteration(policy, critic, trajs, algo, rngs["train"], trace=trace)
        elif algo.mode == "ppo-clip":
            st = ppo_iteration(policy, critic, trajs, algo, rngs["train"])
        else:
            st = ppo_cma_iteration(policy, critic, history, trajs, algo, rngs["train"], iteration)
        adv = st.pop("advantages")

        if record_samples:
            acts = np.concatenate([t.actions for t in trajs])
            for a, A in zip(acts, adv):
                samples.append({"iteration": iteration, "a0": a[0], "a1": a[1], "advantage": A})
            first = trajs[0]
            dists.append({"iteration": iteration,
                          **_mu_sigma_row(first.gen_mean[0], np.sqrt(first.gen_var[0]))})

        row = {"iteration": iteration, "env_steps": env_steps,
               "mean_return": float(np.mean(last_returns)),
               "k_min": float(np.min(normalizer.k)), "k_max": float(np.max(normalizer.k)),
               **st}
        stats.append(row)
        if config.log_every and iteration % config.log_every == 0:
            log.info("seed %s iter %d steps %d return %.4f sigma %.4f", seed, iteration,
                     env_steps, row["mean_return"], row["mean_sigma"])

    summary = {"env": config.env, "mode": config.mode, "setting": config.setting_label,
               "seed": seed, "iterations": iteration, "env_steps": env_steps,
               "R": float(np.mean(last_returns))}
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        cfg = config.to_dict()
        cfg["seeds"] = [seed]
        atomic_write_text(os.path.join(run_dir, "config.json"), json.dumps(cfg, indent=2))
        atomic_write_text(os.path.join(run_dir, "stats.csv"), rows_to_csv(stats, STATS_COLUMNS))
        policy.save(os.path.join(run_dir, "policy"))
        critic.net.save(os.path.join(run_dir, "critic.npz"))
        np.save(os.path.join(run_dir, "obs_scale.npy"), normalizer.k)
        if record_samples:
            atomic_write_text(os.path.join(run_dir, "didactic_actions.csv"),
                              rows_to_csv(samples, ["iteration", "a0", "a1", "advantage"]))
            atomic_write_text(os.path.join(run_dir, "didactic_policy.csv"),
                              rows_to_csv(dists, ["iteration", "mu0", "mu1", "sigma0", "sigma1"]))
            if pg_trace:
                atomic_write_text(os.path.join(run_dir, "pg_trace.csv"),
                                  rows_to_csv(pg_trace, ["step", "mu0", "mu1", "sigma0", "sigma1"]))
        # summary last: its presence marks a complete run
        atomic_write_text(os.path.join(run_dir, "summary.json"), json.dumps(summary, indent=2))
    return RunArtifacts(run_dir, stats, summary)


def _mu_sigma_row(mu, sigma):
    return {"mu0": float(mu[0]), "mu1": float(mu[1]),
            "sigma0": float(sigma[0]), "sigma1": float(sigma[1])}


def pg_divergence_trace(seed=0, N=200, K=100, M=None, sigma=0.3):
    """Policy-gradient steps on one fixed batch of the quadratic problem.

    The policy is pretrained with its mean at the optimum and std ``sigma``.
    ``N`` actions are drawn from it once and weighted by ``r - mean(r)``,
    the exact baseline when every episode is a single step from the same
    state.  Then ``K`` Adam steps on the signed Gaussian loss are taken
    without collecting new data (``M=None`` uses the whole batch each step).
    Returns the mean and std after every step, row 0 being the start, as
    arrays of shape ``(K + 1, 2)``.
    """
    from .algorithms import ProcessedBatch, vanilla_pg_update
    from .envs import QuadraticEnv

    env = QuadraticEnv()
    s_policy, s_pre, s_act, s_train = np.random.SeedSequence(seed).spawn(4)
    policy = GaussianPolicy(env.obs_dim, env.bounds, shared=True, seed=s_policy)
    pretrain(policy, np.random.default_rng(s_pre), steps=500,
             mean_target=[0.0, 0.0], std_target=[sigma, sigma])

    states = np.zeros((N, env.obs_dim))
    actions, mu, c = policy.sample(states, np.random.default_rng(s_act), return_dist=True)
    rewards = -np.sum(actions ** 2, axis=1)
    batch = ProcessedBatch(states, actions, rewards - rewards.mean(), mu, c,
                           gaussian_log_density(actions, mu, c))
    probe = states[:1]
    means, stds = [], []

    def record(_step=None):
        m, v = policy.mean_and_var(probe)
        means.append(m[0])
        stds.append(np.sqrt(v[0]))

    record()
    vanilla_pg_update(policy, batch, K, N if M is None else M,
                      np.random.default_rng(s_train), trace=record)
    return np.array(means), np.array(stds)


def run_experiment(config: ExperimentConfig, output_dir=None):
    """Run every seed of ``config``; one artifact directory per seed."""
    out = config.output_dir if output_dir is None else output_dir
    return [run_seed(config, s, os.path.join(out, f"seed_{s}")) for s in config.seeds]


# -- scoring ----------------------------------------------------------------------------

def normalize_scores(records):
    """Normalize final returns per task, average per setting, rescale so the best is 1.

    ``records`` is an iterable of ``(task, setting, R)``.  Returns
    ``{setting: score}``.  A task whose returns are all equal contributes 0.5
    to every run (with a warning).
    """
    records = list(records)
    by_task = {}
    for task, _, R in records:
        by_task.setdefault(task, []).append(R)
    per_setting = {}
    for task, setting, R in records:
        lo, hi = min(by_task[task]), max(by_task[task])
        if hi == lo:
            warnings.warn(f"task {task!r} has a degenerate return range; scoring it 0.5")
            r_norm = 0.5
        else:
            r_norm = (R - lo) / (hi - lo)
        per_setting.setdefault(setting, []).append(r_norm)
    means = {s: float(np.mean(v)) for s, v in per_setting.items()}
    best = max(means.values())
    if best <= 0:
        return means
    return {s: m / best for s, m in means.items()}


def load_summaries(run_dirs):
    out = []
    for d in run_dirs:
        for root, _, files in os.walk(d):
            if "summary.json" in files:
                with open(os.path.join(root, "summary.json")) as f:
                    out.append(json.load(f))
    return out


def score_runs(run_dirs):
    summaries = load_summaries(run_dirs)
    if not summaries:
        raise ValueError("no completed runs found")
    return normalize_scores((s["env"], s["setting"], s["R"]) for s in summaries)


# -- sweeps -----------------------------------------------------------------------------

def expand_grid(sweep: dict):
    """Yield ``(setting_label, task, ExperimentConfig)`` for every grid point and task.

    Sweep files look like::

        {"base": {...config fields...},
         "tasks": ["quadratic", "pointmass"],
         "task_overrides": {"pointmass": {"total_steps": 200000}},
         "settings": [{"mode": "ppo-cma", "grid": {"N": [...], "H": [...], "M": [...]}},
                      {"mode": "ppo-clip", "grid": {"N": [...], "epsilon": [...]}}]}
    """
    base = dict(sweep.get("base", {}))
    tasks = sweep.get("tasks") or [base.get("env", "quadratic")]
    overrides = sweep.get("task_overrides", {})
    for entry in sweep["settings"]:
        grid = entry.get("grid", {})
        keys = sorted(grid)
        fixed = {k: v for k, v in entry.items() if k != "grid"}
        for values in itertools.product(*(grid[k] for k in keys)):
            point = dict(zip(keys, values))
            label = "|".join([fixed.get("mode", base.get("mode", "ppo-cma"))]
                             + [f"{k}={point[k]}" for k in keys])
            for task in tasks:
                d = {**base, **fixed, **point, **overrides.get(task, {}), "env": task,
                     "setting": label}
                yield label, task, ExperimentConfig.from_dict(d)


def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "=.-_" else "_" for ch in label)


def _completed(run_dir, config: ExperimentConfig, seed) -> bool:
    try:
        with open(os.path.join(run_dir, "summary.json")) as f:
            json.load(f)
        with open(os.path.join(run_dir, "config.json")) as f:
            stored = json.load(f)
    except (OSError, ValueError):
        return False
    expected = config.to_dict()
    expected["seeds"] = [seed]
    return stored == expected


def sweep(sweep_config: dict, output_dir=None):
    """Run (or resume) a grid sweep and return the normalized score table."""
    out = output_dir or sweep_config.get("output_dir", "sweep")
    records = []
    for label, task, cfg in expand_grid(sweep_config):
        for seed in cfg.seeds:
            run_dir = os.path.join(out, _slug(label), task, f"seed_{seed}")
            if _completed(run_dir, cfg, seed):
                with open(os.path.join(run_dir, "summary.json")) as f:
                    R = json.load(f)["R"]
            else:
                R = run_seed(cfg, seed, run_dir).summary["R"]
            records.append((task, label, R))
    scores = normalize_scores(records)
    atomic_write_text(os.path.join(out, "scores.json"), json.dumps(scores, indent=2))
    return scores
