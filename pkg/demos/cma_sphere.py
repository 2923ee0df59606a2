# The CMA-style update on its own: a 2D sphere from (3, 3).
# Covariance is adapted around the old mean before the mean moves, plus a
# rank-one term from the evolution path, so the search widens while it is
# still making progress and narrows at the optimum.
import os

import numpy as np

from ppocma.cma import CmaState, cma_iteration, run_cma


def sphere(x):
    return -float(x @ x)


os.makedirs("demo_out", exist_ok=True)
state = CmaState.create([3.0, 3.0], np.eye(2), pop=64)
rows = run_cma(state, sphere, np.random.default_rng(0), iterations=40,
               trace_path="demo_out/cma_trace.csv")

for row in rows[::4]:
    print(f"iter {row['iteration']:3d}  |mu| {row['mean_norm']:.2e}  trace C {row['trace_cov']:.2e}  "
          f"|p| {row['path_norm']:.2e}")

# and the EMNA variant, which re-estimates the covariance around the new mean
emna = CmaState.create([3.0, 3.0], np.eye(2), pop=64)
rng = np.random.default_rng(0)
print("\nsame seed, covariance estimated around the new mean instead:")
rows_emna = [cma_iteration(emna, sphere, rng, emna=True) for _ in range(40)]
for it in (5, 10, 20, 40):
    print(f"iter {it:3d}  |mu| rank-mu {rows[it - 1]['mean_norm']:.2e}  "
          f"around-new-mean {rows_emna[it - 1]['mean_norm']:.2e}")
