# Plain policy gradient with signed advantages, many minibatch steps on one batch.
# The batch is drawn around the optimum of the quadratic problem; the update
# pushes away from the (many) negative-advantage samples and the mean runs off.
import numpy as np

from ppocma.harness import pg_divergence_trace

means, stds = pg_divergence_trace(seed=1, N=200, K=100)
norm = np.linalg.norm(means, axis=1)

for step in (0, 1, 5, 10, 25, 50, 100):
    print(f"step {step:3d}  |mu| {norm[step]:.4f}  sigma {stds[step].round(4)}")

print(f"\n|mu| grew {norm[-1] / norm[0]:.0f}x; it went up at every step: {bool(np.all(np.diff(norm) > 0))}")
