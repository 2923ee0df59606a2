"""PPO-CMA: proximal policy optimization with CMA-ES style variance adaptation."""
from .algorithms import AlgoConfig, HistoryBuffer, ProcessedBatch
from .cma import CmaState, run_cma
from .critic import Critic, End, Trajectory
from .envs import ObsNormalizer, PointMassEnv, QuadraticEnv, make_env
from .harness import ExperimentConfig, normalize_scores, run_experiment, run_seed, sweep
from .nn import AdamState, Network, NetworkLayout, adam_step
from .policy import ActionBounds, GaussianPolicy, pretrain

__version__ = "0.1.0"
