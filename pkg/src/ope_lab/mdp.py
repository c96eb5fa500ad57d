"""Finite-horizon tabular MDPs, policies, trajectories and the target value.

Indices are zero-based in code: time ``t`` runs over ``0..T-1`` and stands for
step ``t + 1`` of the episode.  Rewards are deterministic functions of
``(t, s, a)`` stored as a ``(T, S, A)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidProblemError, SupportError

PROB_TOL = 1e-12


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Tabular MDP with time-indexed rewards.

    transition: (S, A, S) array ``p(s'|s, a)``.
    reward: (T, S, A) array ``r_t(s, a)``.
    absorbing: index of the absorbing zero-reward state, or None when the
        chain has no such state (ergodic instances).
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    gamma: float = 1.0
    absorbing: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {self.transition.shape}")
        S, A, _ = self.transition.shape
        if self.reward.ndim != 3 or self.reward.shape[1:] != (S, A) or self.reward.shape[0] < 1:
            raise ValueError(f"reward must have shape (T, {S}, {A}), got {self.reward.shape}")
        if self.initial_dist.shape != (S,):
            raise ValueError(f"initial_dist must have shape ({S},), got {self.initial_dist.shape}")
        if self.absorbing is not None and not 0 <= self.absorbing < S:
            raise ValueError(f"absorbing state {self.absorbing} out of range")

    @classmethod
    def stationary(cls, transition, reward, initial_dist, horizon: int, gamma: float = 1.0,
                   absorbing: int | None = None) -> "TabularMdp":
        """Build an MDP whose (S, A) reward table is reused at every step."""
        r = np.asarray(reward, dtype=float)
        return cls(transition, np.broadcast_to(r, (int(horizon),) + r.shape), initial_dist, gamma, absorbing)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def horizon(self) -> int:
        return self.reward.shape[0]

    def with_horizon(self, horizon: int) -> "TabularMdp":
        """Same dynamics with the last-step reward table extended or truncated."""
        r = self.reward
        if horizon <= r.shape[0]:
            r = r[:horizon]
        else:
            r = np.concatenate([r, np.broadcast_to(r[-1], (horizon - r.shape[0],) + r.shape[1:])])
        return TabularMdp(self.transition, r, self.initial_dist, self.gamma, self.absorbing)


@dataclass(frozen=True, eq=False)
class PolicyTable:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))
        if self.probs.ndim != 2:
            raise ValueError(f"policy must be a (S, A) matrix, got shape {self.probs.shape}")

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "PolicyTable":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))


@dataclass(frozen=True, eq=False)
class EvaluationProblem:
    mdp: TabularMdp
    behavior: PolicyTable
    target: PolicyTable

    @property
    def horizon(self) -> int:
        return self.mdp.horizon

    @property
    def gamma(self) -> float:
        return self.mdp.gamma

    def with_horizon(self, horizon: int) -> "EvaluationProblem":
        return EvaluationProblem(self.mdp.with_horizon(horizon), self.behavior, self.target)

    def with_gamma(self, gamma: float) -> "EvaluationProblem":
        m = self.mdp
        return EvaluationProblem(TabularMdp(m.transition, m.reward, m.initial_dist, gamma, m.absorbing),
                                 self.behavior, self.target)

    def ratio_table(self) -> np.ndarray:
        """``pi(a|s) / mu(a|s)`` with 0 where mu is 0 (never sampled)."""
        mu, pi = self.behavior.probs, self.target.probs
        out = np.zeros_like(mu)
        np.divide(pi, mu, out=out, where=mu > 0)
        return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    prob: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen(self.states, int))
        object.__setattr__(self, "actions", _frozen(self.actions, int))
        object.__setattr__(self, "rewards", _frozen(self.rewards))

    def __len__(self) -> int:
        return len(self.states)

    @classmethod
    def from_actions(cls, mdp: TabularMdp, states: Sequence[int], actions: Sequence[int],
                     prob: float | None = None) -> "Trajectory":
        """Fill in rewards from the MDP for a given (state, action) path."""
        s = np.asarray(states, dtype=int)
        a = np.asarray(actions, dtype=int)
        r = mdp.reward[np.arange(len(s)), s, a]
        return cls(s, a, r, prob)

    def discounted_return(self, gamma: float) -> float:
        disc = gamma ** np.arange(len(self.rewards))
        return float(np.dot(disc, self.rewards))


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """N trajectories of equal length stored as (N, T) arrays.

    ``prob`` holds exact path probabilities under the behavior policy for
    enumerated batches and is None for sampled ones.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    prob: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen(self.states, np.int64))
        object.__setattr__(self, "actions", _frozen(self.actions, np.int64))
        object.__setattr__(self, "rewards", _frozen(self.rewards))
        if self.prob is not None:
            object.__setattr__(self, "prob", _frozen(self.prob))
        if not (self.states.shape == self.actions.shape == self.rewards.shape) or self.states.ndim != 2:
            raise ValueError("states, actions and rewards must share one (N, T) shape")

    def __len__(self) -> int:
        return self.states.shape[0]

    def __iter__(self) -> Iterator[Trajectory]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Trajectory:
        p = None if self.prob is None else float(self.prob[i])
        return Trajectory(self.states[i], self.actions[i], self.rewards[i], p)

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def head(self, n: int) -> "TrajectoryBatch":
        p = None if self.prob is None else self.prob[:n]
        return TrajectoryBatch(self.states[:n], self.actions[:n], self.rewards[:n], p)

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory]) -> "TrajectoryBatch":
        if not trajectories:
            raise ValueError("empty batch")
        probs = [t.prob for t in trajectories]
        prob = None if any(p is None for p in probs) else np.array(probs)
        return cls(np.stack([t.states for t in trajectories]),
                   np.stack([t.actions for t in trajectories]),
                   np.stack([t.rewards for t in trajectories]), prob)


def as_batch(trajectories) -> TrajectoryBatch:
    if isinstance(trajectories, TrajectoryBatch):
        return trajectories
    if isinstance(trajectories, Trajectory):
        return TrajectoryBatch.from_trajectories([trajectories])
    return TrajectoryBatch.from_trajectories(list(trajectories))


@dataclass(frozen=True)
class Violation:
    code: str
    where: tuple = field(default=())
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.code}{self.where}: {self.detail}"


def state_marginals(mdp: TabularMdp, policy: np.ndarray, horizon: int | None = None,
                    initial: np.ndarray | None = None) -> np.ndarray:
    """Forward recursion for ``Pr(s_t = s)``; returns a (T, S) array."""
    T = mdp.horizon if horizon is None else horizon
    d = np.empty((T, mdp.num_states))
    d[0] = mdp.initial_dist if initial is None else initial
    # P_pol[s, s'] = sum_a policy(a|s) p(s'|s, a)
    p_pol = np.einsum("sa,sax->sx", policy, mdp.transition)
    for t in range(1, T):
        d[t] = d[t - 1] @ p_pol
    return d


def validate_problem(problem: EvaluationProblem) -> list[Violation]:
    """Collect every invariant violation of ``problem``; empty means valid."""
    out: list[Violation] = []
    mdp = problem.mdp
    S, A = mdp.num_states, mdp.num_actions
    P = mdp.transition

    if np.any(~np.isfinite(P)) or np.any(P < 0):
        for s, a, x in zip(*np.nonzero(~(P >= 0))):
            out.append(Violation("transition_negative", (int(s), int(a), int(x)), "negative or NaN entry"))
    row = P.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(row - 1.0) > PROB_TOL)):
        out.append(Violation("transition_row_sum", (int(s), int(a)), f"row sums to {row[s, a]!r}"))

    r = mdp.reward
    for t, s, a in zip(*np.nonzero(~((r >= 0) & (r <= 1)))):
        out.append(Violation("reward_range", (int(t), int(s), int(a)), f"reward {r[t, s, a]!r} outside [0, 1]"))

    p1 = mdp.initial_dist
    if np.any(~(p1 >= 0)) or abs(p1.sum() - 1.0) > PROB_TOL:
        out.append(Violation("initial_dist", (), f"not a distribution (sum={p1.sum()!r})"))
    if not 0.0 <= mdp.gamma <= 1.0:
        out.append(Violation("gamma", (), f"discount {mdp.gamma!r} outside [0, 1]"))

    if mdp.absorbing is not None:
        z = mdp.absorbing
        if np.any(P[z, :, z] != 1.0):
            out.append(Violation("absorbing_loop", (z,), "absorbing state must self-loop under every action"))
        if np.any(r[:, z, :] != 0.0):
            out.append(Violation("absorbing_reward", (z,), "absorbing state must have reward 0"))

    for name, pol in (("behavior", problem.behavior.probs), ("target", problem.target.probs)):
        if pol.shape != (S, A):
            out.append(Violation(f"{name}_shape", (), f"expected ({S}, {A}), got {pol.shape}"))
            continue
        for s, a in zip(*np.nonzero(~(pol >= 0))):
            out.append(Violation(f"{name}_negative", (int(s), int(a)), f"probability {pol[s, a]!r}"))
        rs = pol.sum(axis=1)
        for s in np.nonzero(np.abs(rs - 1.0) > PROB_TOL)[0]:
            out.append(Violation(f"{name}_row_sum", (int(s),), f"row sums to {rs[s]!r}"))

    if out:
        # reachability below assumes well-formed tables
        return out

    mu, pi = problem.behavior.probs, problem.target.probs
    reach = state_marginals(mdp, mu).max(axis=0) > 0
    for s, a in zip(*np.nonzero((pi > 0) & (mu == 0) & reach[:, None])):
        out.append(Violation("absolute_continuity", (int(s), int(a)),
                             f"pi={pi[s, a]!r} > 0 but mu=0 on a reachable state"))
    return out


def ensure_valid(problem: EvaluationProblem, allow: tuple[str, ...] = ()) -> None:
    violations = [v for v in validate_problem(problem) if v.code not in allow]
    if violations:
        raise InvalidProblemError(violations)


def target_value(problem: EvaluationProblem) -> float:
    """Exact ``E_pi[sum_t gamma^(t-1) r_t]`` by backward induction over (t, s)."""
    ensure_valid(problem)
    mdp, pi = problem.mdp, problem.target.probs
    v = np.zeros(mdp.num_states)
    for t in range(mdp.horizon - 1, -1, -1):
        q = mdp.reward[t] + mdp.gamma * (mdp.transition @ v)
        v = (pi * q).sum(axis=1)
    return float(mdp.initial_dist @ v)


def step_ratios(problem: EvaluationProblem, trajectory: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per-step ratios ``rho_t`` and their running products ``rho_{1:t}``."""
    mu, pi = problem.behavior.probs, problem.target.probs
    s, a = trajectory.states, trajectory.actions
    m = mu[s, a]
    bad = np.nonzero(m <= 0)[0]
    if bad.size:
        t = int(bad[0])
        raise SupportError("behavior probability is zero", t + 1, int(s[t]), int(a[t]))
    rho = pi[s, a] / m
    return rho, np.cumprod(rho)
