"""Seeded trajectory sampling and Monte Carlo estimator statistics.

Trajectories are generated in fixed-size chunks.  Chunk ``j`` draws all of its
uniforms from ``SeedSequence([seed, j])`` and the chunk size depends only on
the horizon, so trajectory ``i`` is a pure function of ``(seed, i)``.  Any
prefix of a batch equals a smaller batch with the same seed, and the worker
count never changes the output.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .estimators import BatchEstimate, returns, summarize
from .mdp import EvaluationProblem, TrajectoryBatch, ensure_valid

MAX_CHUNK = 4096
CHUNK_BUDGET = 1 << 20  # uniforms per chunk and step pair


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


@dataclass(frozen=True)
class SamplerConfig:
    seed: int
    num_trajectories: int
    num_workers: int = 1

    def __post_init__(self):
        if self.num_trajectories < 1:
            raise ValueError("num_trajectories must be at least 1")
        if self.num_workers < 1:
            raise ValueError("num_workers must be at least 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def chunk_size(horizon: int) -> int:
    return max(1, min(MAX_CHUNK, CHUNK_BUDGET // horizon))


class _InverseCdf:
    """Vectorised categorical draws from rows of a probability table (last axis)."""

    def __init__(self, probs: np.ndarray):
        self.cdf = np.cumsum(probs, axis=-1)
        n = probs.shape[-1]
        # float round-off can leave cdf[-1] < u; fall back to the last positive entry
        self.last = n - 1 - np.argmax((probs > 0)[..., ::-1], axis=-1)

    def draw(self, index: tuple, u: np.ndarray) -> np.ndarray:
        rows = self.cdf[index]
        k = np.count_nonzero(rows <= u[:, None], axis=1)
        return np.minimum(k, self.last[index])


def _sample_chunk(problem: EvaluationProblem, policy: np.ndarray, seed: int, chunk: int, size: int):
    mdp = problem.mdp
    T = mdp.horizon
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, chunk])))
    u = rng.random((size, T, 2))
    pol = _InverseCdf(policy)
    kern = _InverseCdf(mdp.transition)
    init = np.cumsum(mdp.initial_dist)
    init_last = int(np.flatnonzero(mdp.initial_dist > 0)[-1])

    states = np.empty((size, T), dtype=np.int64)
    actions = np.empty((size, T), dtype=np.int64)
    s = np.minimum(np.count_nonzero(init[None, :] <= u[:, 0, 0, None], axis=1), init_last)
    for t in range(T):
        if t:
            s = kern.draw((states[:, t - 1], actions[:, t - 1]), u[:, t, 0])
        a = pol.draw((s,), u[:, t, 1])
        states[:, t] = s
        actions[:, t] = a
    rewards = mdp.reward[np.arange(T)[None, :], states, actions]
    return states, actions, rewards


def sample_trajectories(problem: EvaluationProblem, config: SamplerConfig, policy: str = "behavior") -> TrajectoryBatch:
    """Draw ``config.num_trajectories`` i.i.d. trajectories.

    ``policy="target"`` samples on-policy under the target, which is only
    meant for cross-checking the target value.
    """
    ensure_valid(problem)
    if policy not in ("behavior", "target"):
        raise ValueError(f"policy must be 'behavior' or 'target', got {policy!r}")
    table = (problem.behavior if policy == "behavior" else problem.target).probs
    N = config.num_trajectories
    size = chunk_size(problem.horizon)
    n_chunks = -(-N // size)

    def job(j):
        return _sample_chunk(problem, table, config.seed, j, size)

    if config.num_workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(min(config.num_workers, n_chunks)) as pool:
            parts = list(pool.map(job, range(n_chunks)))
    else:
        parts = [job(j) for j in range(n_chunks)]
    states, actions, rewards = (np.concatenate([p[i] for p in parts])[:N] for i in range(3))
    return TrajectoryBatch(states, actions, rewards)


def estimator_stats(problem: EvaluationProblem, kind, config: SamplerConfig, weights=None) -> BatchEstimate:
    """Mean, sample variance and standard error of per-trajectory returns."""
    if config.num_trajectories < 2:
        raise ValueError("estimator_stats needs at least 2 trajectories")
    batch = sample_trajectories(problem, config)
    return summarize(returns(problem, kind, batch, weights=weights))


@dataclass(frozen=True)
class CurveRow:
    n: int
    mean: float
    sample_variance: float
    stderr: float
    median: float


def convergence_curve(problem: EvaluationProblem, kind, seed: int, n_grid, num_workers: int = 1,
                      weights=None) -> list[CurveRow]:
    """Statistics over nested prefixes of one batch sized ``max(n_grid)``."""
    grid = [int(n) for n in n_grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 2:
        raise ValueError("n_grid must be strictly increasing with entries >= 2")
    batch = sample_trajectories(problem, SamplerConfig(seed, grid[-1], num_workers))
    vals = returns(problem, kind, batch, weights=weights)
    rows = []
    for n in grid:
        est = summarize(vals[:n])
        rows.append(CurveRow(n, est.estimate, est.sample_variance, est.stderr, float(np.median(vals[:n]))))
    return rows
