"""Exhaustive enumeration of behavior-policy trajectories."""
from __future__ import annotations

import os

import numpy as np

from .errors import EnumerationCapError
from .mdp import EvaluationProblem, TrajectoryBatch, ensure_valid

DEFAULT_ENUM_CAP = 10_000_000


def default_cap() -> int:
    env = os.environ.get("OPE_LAB_ENUM_CAP")
    return int(env) if env else DEFAULT_ENUM_CAP


def enumerate_paths(problem: EvaluationProblem, horizon: int | None = None, cap: int | None = None,
                    initial: np.ndarray | None = None, start_time: int = 0) -> TrajectoryBatch:
    """All positive-probability trajectories under the behavior policy.

    Paths come out in lexicographic order of ``(s_1, a_1, s_2, a_2, ...)`` and
    carry their exact probabilities.  ``start_time`` (0-based) and ``initial``
    restart the process mid-episode: rewards are read from
    ``reward[start_time:]`` and the path runs until the original horizon unless
    ``horizon`` shortens it further.
    """
    ensure_valid(problem)
    cap = default_cap() if cap is None else cap
    mdp = problem.mdp
    mu = problem.behavior.probs
    P = mdp.transition
    T = mdp.horizon - start_time if horizon is None else horizon
    if T < 1 or start_time + T > mdp.horizon:
        raise ValueError(f"cannot enumerate {T} steps from time {start_time} with horizon {mdp.horizon}")

    p1 = mdp.initial_dist if initial is None else np.asarray(initial, dtype=float)
    w0 = p1[:, None] * mu
    s, a = np.nonzero(w0 > 0)
    if s.size > cap:
        raise EnumerationCapError(int(s.size), cap)
    prob = w0[s, a]
    states, actions = [s], [a]
    for _ in range(1, T):
        w = P[s, a][:, :, None] * mu[None, :, :]
        live = w > 0
        n = int(np.count_nonzero(live))
        if n > cap:
            raise EnumerationCapError(n, cap)
        parent, s, a = np.nonzero(live)
        prob = prob[parent] * w[parent, s, a]
        states = [col[parent] for col in states] + [s]
        actions = [col[parent] for col in actions] + [a]

    st = np.column_stack(states)
    ac = np.column_stack(actions)
    steps = np.arange(start_time, start_time + T)
    rw = mdp.reward[steps[None, :], st, ac]
    return TrajectoryBatch(st, ac, rw, prob)
