"""A stripped-down CMA-ES: top-half log-rank weights, rank-mu covariance update
and an evolution path, without step-size control."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

EIG_FLOOR = 1e-12


@dataclass
class CmaState:
    mean: np.ndarray
    cov: np.ndarray
    path: np.ndarray
    pop: int
    c_mu: float
    c_1: float
    c_c: float
    iteration: int = 0

    @classmethod
    def create(cls, mean, cov=None, pop: int = 64) -> "CmaState":
        mean = np.asarray(mean, dtype=float)
        n = mean.size
        cov = np.eye(n) if cov is None else np.asarray(cov, dtype=float)
        c_mu, c_1, c_c = default_rates(n, pop)
        return cls(mean.copy(), cov.copy(), np.zeros(n), pop, c_mu, c_1, c_c)

    @property
    def beta0(self) -> float:
        return 1.0 - self.c_c

    @property
    def beta1(self) -> float:
        return float(np.sqrt(self.c_c * (2.0 - self.c_c)))


def default_rates(n: int, pop: int):
    """Tutorial-style learning rates ``(c_mu, c_1, c_c)`` for dimension n."""
    m = pop // 2
    c_mu = 0.5 * min(1.0, 2.0 * m / (n + 2) ** 2)
    c_1 = 2.0 / ((n + 1.3) ** 2 + m)
    c_c = 4.0 / (n + 4)
    return c_mu, c_1, c_c


def rank_weights(fitness) -> np.ndarray:
    """Zero weight for the worse half, log-rank weights summing to 1 for the rest.

    Higher fitness is better.  Ties are broken by sample index.
    """
    fitness = np.asarray(fitness, dtype=float)
    pop = fitness.size
    if pop < 2:
        raise ValueError("population must have at least 2 samples")
    if not np.all(np.isfinite(fitness)):
        raise ValueError("non-finite fitness")
    m = pop // 2
    order = np.argsort(-fitness, kind="stable")
    raw = np.log(m + 0.5) - np.log(np.arange(1, m + 1))
    w = np.zeros(pop)
    w[order[:m]] = raw / raw.sum()
    return w


def covariance_update(cov, samples, weights, center, path, c_mu, c_1):
    """``(1 - c_mu - c_1) C + c_mu sum_i w_i d_i d_i^T + c_1 p p^T`` with ``d_i = x_i - center``."""
    d = samples - center
    rank_mu = (weights[:, None] * d).T @ d
    return (1.0 - c_mu - c_1) * cov + c_mu * rank_mu + c_1 * np.outer(path, path)


def _repair(cov):
    cov = 0.5 * (cov + cov.T)
    lo = np.linalg.eigvalsh(cov)[0]
    if lo <= EIG_FLOOR:
        cov = cov + (2 * EIG_FLOOR - lo) * np.eye(cov.shape[0])
    return cov


def cma_iteration(state: CmaState, objective, rng, emna: bool = False) -> dict:
    """Sample, rank, update covariance around the old mean, then move the mean.

    ``objective`` maps one point to a fitness to maximize.  ``emna=True``
    estimates the covariance around the new mean instead; it exists only to
    compare the two orders.  Updates ``state`` in place and returns a trace row.
    """
    n = state.mean.size
    chol = np.linalg.cholesky(state.cov)
    x = state.mean + rng.standard_normal((state.pop, n)) @ chol.T
    f = np.array([objective(xi) for xi in x], dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("objective returned a non-finite value")
    w = rank_weights(f)
    old_mean = state.mean
    new_mean = w @ x
    center = new_mean if emna else old_mean
    cov = covariance_update(state.cov, x, w, center, state.path, state.c_mu, state.c_1)
    state.cov = _repair(cov)
    state.mean = new_mean
    state.path = state.beta0 * state.path + state.beta1 * (new_mean - old_mean)
    state.iteration += 1
    return {
        "iteration": state.iteration,
        "best_fitness": float(f.max()),
        "mean_norm": float(np.linalg.norm(state.mean)),
        "trace_cov": float(np.trace(state.cov)),
        "path_norm": float(np.linalg.norm(state.path)),
    }


def run_cma(state: CmaState, objective, rng, iterations: int, trace_path=None):
    """Run several iterations; optionally write the per-iteration trace as CSV."""
    rows = [cma_iteration(state, objective, rng) for _ in range(iterations)]
    if trace_path is not None:
        with open(trace_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return rows
