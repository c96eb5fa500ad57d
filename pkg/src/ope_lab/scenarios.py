"""Canonical problem instances and seeded random problem generators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import EvaluationProblem, PolicyTable, TabularMdp

PATHS = ("a1,a1", "a1,a2", "a2,a1", "a2,a2")
ESTIMATORS = ("IS", "PDIS", "SIS")

# Per-path estimator values of the three two-step counterexamples.
_ATOMS = {
    1: {"IS": (1.44, 1.92, 0.96, 1.28), "PDIS": (1.2, 2.16, 0.8, 1.44), "SIS": (1.2, 2.0, 0.8, 1.6)},
    2: {"IS": (0.0, 1.44, 0.64, 1.92), "PDIS": (0.0, 1.44, 0.8, 1.76), "SIS": (0.0, 1.2, 0.8, 2.0)},
    3: {"IS": (0.0, 0.96, 0.96, 1.28), "PDIS": (0.0, 0.96, 0.8, 1.44), "SIS": (0.0, 0.8, 0.8, 1.6)},
}
_MEANS = {1: 1.4, 2: 1.0, 3: 0.8}
_VARIANCES = {
    1: {"IS": 0.12, "PDIS": 0.2448, "SIS": 0.2},
    2: {"IS": 0.5424, "PDIS": 0.4528, "SIS": 0.52},
    3: {"IS": 0.2304, "PDIS": 0.2688, "SIS": 0.32},
}
# Variance ordering shown for each example, lowest first.
ORDERINGS = {1: ("IS", "SIS", "PDIS"), 2: ("PDIS", "SIS", "IS"), 3: ("IS", "PDIS", "SIS")}

# (pi(a1|s1), pi(a1|s2), rewards at s1, rewards at s2); mu is uniform.
_COUNTEREXAMPLE_PARAMS = {
    1: (0.6, 0.6, (1.0, 1.0), (0.0, 1.0)),
    2: (0.6, 0.4, (0.0, 1.0), (0.0, 1.0)),
    3: (0.6, 0.6, (0.0, 1.0), (0.0, 1.0)),
}


@dataclass(frozen=True)
class CounterexampleFixture:
    which: int
    returns: dict[str, tuple[float, ...]]
    path_probs: tuple[float, ...]
    expected_mean: float
    expected_variance: dict[str, float]

    def mean(self, estimator: str) -> float:
        return float(np.dot(self.path_probs, self.returns[estimator]))

    def variance(self, estimator: str) -> float:
        v = np.asarray(self.returns[estimator])
        p = np.asarray(self.path_probs)
        m = float(np.dot(p, v))
        return float(np.dot(p, (v - m) ** 2))


def counterexample_fixture(which: int) -> CounterexampleFixture:
    if which not in _ATOMS:
        raise ValueError(f"counterexample must be 1, 2 or 3, got {which!r}")
    return CounterexampleFixture(which, dict(_ATOMS[which]), (0.25,) * 4, _MEANS[which], dict(_VARIANCES[which]))


def counterexample_mdp(which: int) -> EvaluationProblem:
    """Two-step deterministic MDP ``s1 -> s2 -> end`` reproducing a counterexample's atoms.

    State 0 is s1, state 1 is s2 and state 2 is the absorbing end state.  Both
    actions move s1 to s2; the behavior policy is uniform.
    """
    if which not in _COUNTEREXAMPLE_PARAMS:
        raise ValueError(f"counterexample must be 1, 2 or 3, got {which!r}")
    p, q, r1, r2 = _COUNTEREXAMPLE_PARAMS[which]
    P = np.zeros((3, 2, 3))
    P[0, :, 1] = 1.0
    P[1, :, 2] = 1.0
    P[2, :, 2] = 1.0
    R = np.array([r1, r2, (0.0, 0.0)])
    mdp = TabularMdp.stationary(P, R, [1.0, 0.0, 0.0], horizon=2, gamma=1.0, absorbing=2)
    mu = PolicyTable.uniform(3, 2)
    pi = PolicyTable(np.array([[p, 1 - p], [q, 1 - q], [0.5, 0.5]]))
    return EvaluationProblem(mdp, mu, pi)


def two_lane(T: int) -> EvaluationProblem:
    """Two deterministic lanes behind a single start state.

    From s0, action 0 enters the rewarding lane and action 1 the empty one.
    Each lane holds T - 1 chain states, so every episode spends T steps
    collecting reward 1 per step or nothing.  The target policy takes action 0
    at s0 and matches the uniform behavior policy elsewhere; under oracle
    ratios the SIS return is 0 or 2T with equal probability.
    """
    T = int(T)
    if T <= 3:
        raise ValueError(f"two-lane horizon must exceed 3, got {T}")
    n_chain = T - 1
    S = 2 + 2 * n_chain
    lane1 = list(range(1, 1 + n_chain))
    lane2 = list(range(1 + n_chain, 1 + 2 * n_chain))
    end = S - 1
    P = np.zeros((S, 2, S))
    P[0, 0, lane1[0]] = 1.0
    P[0, 1, lane2[0]] = 1.0
    for lane in (lane1, lane2):
        for i, s in enumerate(lane):
            nxt = lane[i + 1] if i + 1 < len(lane) else end
            P[s, :, nxt] = 1.0
    P[end, :, end] = 1.0
    R = np.zeros((S, 2))
    R[0, 0] = 1.0
    R[lane1, :] = 1.0
    p1 = np.zeros(S)
    p1[0] = 1.0
    mdp = TabularMdp.stationary(P, R, p1, horizon=T, gamma=1.0, absorbing=end)
    mu = PolicyTable.uniform(S, 2)
    pi = np.full((S, 2), 0.5)
    pi[0] = (1.0, 0.0)
    return EvaluationProblem(mdp, mu, PolicyTable(pi))


def random_ergodic(seed: int, num_states: int, num_actions: int, T: int, gamma: float = 1.0,
                   policy_gap: float = 0.2, initial: str = "point") -> EvaluationProblem:
    """Seeded random problem with a strictly positive transition kernel.

    The behavior policy is uniform.  The target mixes it with a random
    Dirichlet policy so that each state's total-variation gap is at most
    ``policy_gap``.  Rewards are uniform on [0, 1] and shared across steps.
    ``initial`` is ``"point"`` (start in state 0) or ``"random"``.  The draws
    do not depend on ``T`` or ``gamma``, so one seed defines a whole horizon
    family.
    """
    if num_states < 2 or num_actions < 2:
        raise ValueError("need at least 2 states and 2 actions")
    if not 0.0 <= policy_gap < 1.0:
        raise ValueError("policy_gap must lie in [0, 1)")
    S, A = num_states, num_actions
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(S, A))
    R = rng.random((S, A))
    q = rng.dirichlet(np.ones(A), size=S)
    p_random = rng.dirichlet(np.ones(S))

    mu = np.full((S, A), 1.0 / A)
    tv = 0.5 * np.abs(q - mu).sum(axis=1)
    lam = np.where(tv > 0, np.minimum(1.0, policy_gap / np.where(tv > 0, tv, 1.0)), 0.0)
    pi = (1.0 - lam)[:, None] * mu + lam[:, None] * q
    pi = pi / pi.sum(axis=1, keepdims=True)

    if initial == "point":
        p1 = np.zeros(S)
        p1[0] = 1.0
    elif initial == "random":
        p1 = p_random
    else:
        raise ValueError(f"initial must be 'point' or 'random', got {initial!r}")
    mdp = TabularMdp.stationary(P, R, p1, horizon=T, gamma=gamma)
    return EvaluationProblem(mdp, PolicyTable(mu), PolicyTable(pi))


def tilt_target(problem: EvaluationProblem, beta: float) -> EvaluationProblem:
    """Replace the target with ``mu * exp(beta * r_1)`` renormalised per state."""
    mu = problem.behavior.probs
    logits = beta * problem.mdp.reward[0]
    pi = mu * np.exp(logits - logits.max(axis=1, keepdims=True))
    pi = pi / pi.sum(axis=1, keepdims=True)
    return EvaluationProblem(problem.mdp, problem.behavior, PolicyTable(pi))


def random_problem(seed: int, index: int, max_states: int = 4, max_actions: int = 3, max_T: int = 6,
                   max_paths: int = 200_000, tilted: float = 0.0) -> EvaluationProblem:
    """Member ``index`` of a seeded population of small enumerable problems.

    Sizes, discount, policy gap and start distribution are drawn per member;
    the horizon is reduced until ``(S * A) ** T <= max_paths``.  With
    probability ``tilted`` the target is a reward-tilted version of the
    behavior policy instead of a random mixture.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    T = int(rng.integers(1, max_T + 1))
    while T > 1 and (S * A) ** T > max_paths:
        T -= 1
    gamma = 1.0 if rng.random() < 0.5 else float(rng.random())
    gap = float(rng.uniform(0.0, 0.9))
    initial = "point" if rng.random() < 0.5 else "random"
    inner_seed = int(rng.integers(2 ** 32))
    use_tilt = rng.random() < tilted
    beta = float(rng.uniform(0.0, 4.0))
    prob = random_ergodic(inner_seed, S, A, T, gamma, gap, initial)
    return tilt_target(prob, beta) if use_tilt else prob
