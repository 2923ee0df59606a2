# A tiny grid over the history length H, scored with per-task normalization.
# Re-running the script skips runs that already finished.
# With only 30 short iterations the long history (H=9) is still paying for its
# wide exploration when the budget ends, so it scores lowest here.
import json

from ppocma.harness import sweep

grid = {
    "base": {"N": 200, "M": 64, "K": 50, "total_steps": 200 * 30, "seeds": [0, 1],
             "init_mean": [0.5, 0.5], "init_std": [0.1, 0.1], "log_every": 0},
    "tasks": ["quadratic"],
    "settings": [
        {"mode": "ppo-cma", "grid": {"H": [1, 3, 9]}},
        {"mode": "ppo-cma-no-mirror", "grid": {"H": [9]}},
    ],
}

scores = sweep(grid, "demo_out/sweep")
print(json.dumps(dict(sorted(scores.items(), key=lambda kv: -kv[1])), indent=2))
