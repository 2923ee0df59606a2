# A small control task: steer a damped point mass to a random target.
# Returns are the negative squared distance summed over the episode, so a
# perfect policy still pays for the time it takes to get there.
import numpy as np

from ppocma.harness import ExperimentConfig, run_seed

config = ExperimentConfig(env="pointmass", mode="ppo-cma", N=2000, T=100, total_steps=2000 * 25,
                          log_every=5)

# %% one seed, artifacts under demo_out/pointmass
res = run_seed(config, seed=0, run_dir="demo_out/pointmass")
for row in res.stats[::5] + [res.stats[-1]]:
    print(f"iter {row['iteration']:3d}  steps {row['env_steps']:6d}  return {row['mean_return']:8.3f}  "
          f"sigma {row['mean_sigma']:.3f}")

# %% the learned policy next to two references
from ppocma.policy import GaussianPolicy
from ppocma.envs import make_env

policy = GaussianPolicy.load("demo_out/pointmass/policy")
scale = np.load("demo_out/pointmass/obs_scale.npy")


def rollout(act, episodes=200, seed=1):
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(episodes):
        env = make_env("pointmass", 2, T=100)
        obs, done = env.reset(rng), False
        while not done:
            obs, r, end = env.step(act(obs, rng))
            total += r
            done = end.value != "none"
    return total / episodes


greedy = lambda obs, rng: policy.mean_and_var((obs * scale)[None])[0][0]
scripted = lambda obs, rng: np.clip(20 * (obs[4:] - obs[:2]) - 4 * obs[2:4], -1, 1)
uniform = lambda obs, rng: rng.uniform(-1, 1, 2)
for name, fn in (("learned (mean action)", greedy), ("scripted PD", scripted), ("uniform random", uniform)):
    print(f"{name:22s} {rollout(fn):8.3f}")
