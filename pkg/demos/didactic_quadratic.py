# Stateless quadratic problem: reward is -a.a for a 2D action, one step per episode.
# PPO and PPO-CMA start from the same narrow Gaussian away from the optimum and
# we watch how their exploration std evolves.  Figures land in demo_out/.
import os

import numpy as np

from ppocma.harness import ExperimentConfig, run_seed
from ppocma.viz import emit_didactic_viz

OUT = "demo_out/didactic"
ITERATIONS = 40

common = dict(env="quadratic", N=200, M=64, K=100, H=9, total_steps=200 * ITERATIONS,
              init_mean=[0.5, 0.5], init_std=[0.1, 0.1], log_every=0)

# %% train both methods on the same seed
results = {}
for mode in ("ppo-clip", "ppo-cma"):
    run_dir = os.path.join(OUT, mode)
    results[mode] = run_seed(ExperimentConfig(mode=mode, **common), seed=0, run_dir=run_dir)
    emit_didactic_viz(run_dir, every=4)

# %% PPO's std only shrinks; PPO-CMA first grows it along the way to the optimum
# and then contracts, which is not finished after 40 iterations
for mode, res in results.items():
    sigma = np.array([row["mean_sigma"] for row in res.stats])
    ret = np.array([row["mean_return"] for row in res.stats])
    print(f"{mode:9s} sigma: start {sigma[0]:.3f} peak {sigma.max():.3f} (iter {sigma.argmax() + 1}) "
          f"end {sigma[-1]:.3f} | return end {ret[-1]:.5f}")
    for it in (1, 5, 10, 20, ITERATIONS):
        row = res.stats[it - 1]
        print(f"   iter {it:3d}  |mu| {row['mean_mu_norm']:.3f}  sigma {row['mean_sigma']:.3f}")

print(f"\nopen {OUT}/*/didactic.svg to see sampled actions (green: positive advantage, red: negative)")
