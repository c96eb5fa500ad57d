"""Exact sampling distributions and moments of estimator returns.

Two independent routes: full trajectory enumeration (exponential in T, used
as the oracle) and a backward moment recursion over (t, s) that is polynomial
in S * A * T.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import Kind, as_kind, discounts, ratios, returns, sis_terms, _weights_array
from .errors import EnumerationCapError
from .mdp import EvaluationProblem, TrajectoryBatch, ensure_valid
from .occupancy import occupancies
from .paths import enumerate_paths

VAR_CLAMP = 1e-12


@dataclass(frozen=True, eq=False)
class ReturnDistribution:
    """Atoms of an estimator's sampling law; repeated values are not merged."""

    values: np.ndarray
    probs: np.ndarray

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return [(float(v), float(p)) for v, p in zip(self.values, self.probs)]

    def mean(self) -> float:
        return float(np.dot(self.probs, self.values))

    def variance(self) -> float:
        m = self.mean()
        return float(np.dot(self.probs, (self.values - m) ** 2))

    def merged(self, decimals: int = 12) -> dict[float, float]:
        """Probability mass per value rounded to ``decimals`` (for display and tests)."""
        out: dict[float, float] = {}
        for v, p in zip(np.round(self.values, decimals), self.probs):
            out[float(v)] = out.get(float(v), 0.0) + float(p)
        return out


@dataclass(frozen=True)
class MomentReport:
    mean: float
    variance: float
    method: str
    estimator: str
    overflow_step: int | None = None

    @property
    def second_moment(self) -> float:
        return self.variance + self.mean ** 2

    def as_dict(self) -> dict:
        d = {"estimator": self.estimator, "method": self.method, "mean": self.mean, "variance": self.variance}
        if self.overflow_step is not None:
            d["overflow_step"] = self.overflow_step
        return d


def _clamp(var: float, scale: float) -> float:
    if var < 0 and var >= -VAR_CLAMP * max(1.0, abs(scale)):
        return 0.0
    return var


def enumerate_returns(problem: EvaluationProblem, kind, weights=None, cap: int | None = None,
                      batch: TrajectoryBatch | None = None) -> ReturnDistribution:
    kind = as_kind(kind)
    if kind is Kind.RCIS:
        raise ValueError("RCIS is a batch estimator with no per-trajectory sampling law")
    batch = enumerate_paths(problem, cap=cap) if batch is None else batch
    return ReturnDistribution(returns(problem, kind, batch, weights=weights), batch.prob)


def exact_moments(problem: EvaluationProblem, kind, method: str = "enumeration", weights=None,
                  cap: int | None = None) -> MomentReport:
    """Mean and variance of one estimator's return under the behavior policy."""
    if method == "moment_dp":
        return moment_dp_variance(problem, kind, weights=weights)
    if method != "enumeration":
        raise ValueError(f"unknown method {method!r}")
    dist = enumerate_returns(problem, kind, weights=weights, cap=cap)
    return MomentReport(dist.mean(), _clamp(dist.variance(), dist.mean()), "enumeration", str(as_kind(kind)))


def moment_dp_variance(problem: EvaluationProblem, kind, weights=None) -> MomentReport:
    """Exact first and second moments by backward recursion over (t, state).

    PDIS uses ``X_t = rho_t (r_t + gamma X_{t+1})``.  IS tracks the pair
    ``Y_t = rho_t Y_{t+1}``, ``Z_t = rho_t (r_t Y_{t+1} + gamma Z_{t+1})`` with
    ``Y_{T+1} = 1, Z_{T+1} = 0``, so ``Z_1 = rho_{1:T} G_T``.  SIS and ASIS are
    additive functionals ``S_t = gamma^(t-1) w_t r_t + S_{t+1}``.  If a
    moment overflows, the variance is reported as +inf together with the
    1-based step where it happened.
    """
    kind = as_kind(kind)
    ensure_valid(problem)
    mdp = problem.mdp
    mu, pi = problem.behavior.probs, problem.target.probs
    P, R, g = mdp.transition, mdp.reward, mdp.gamma
    T, S = mdp.horizon, mdp.num_states
    p1 = mdp.initial_dist
    # mu * rho and mu * rho^2, zero off the behavior support
    w1 = np.where(mu > 0, pi, 0.0)
    w2 = np.where(mu > 0, pi ** 2 / np.where(mu > 0, mu, 1.0), 0.0)

    overflow = None
    with np.errstate(over="ignore", invalid="ignore"):
        if kind is Kind.PDIS:
            m, q = np.zeros(S), np.zeros(S)
            for t in range(T - 1, -1, -1):
                r = R[t]
                em, eq = P @ m, P @ q
                m = (w1 * (r + g * em)).sum(axis=1)
                q = (w2 * (r * r + 2 * g * r * em + g * g * eq)).sum(axis=1)
                if overflow is None and not np.all(np.isfinite(q)):
                    overflow = t + 1
        elif kind is Kind.IS:
            y1, y2 = np.ones(S), np.ones(S)
            z1, yz, z2 = np.zeros(S), np.zeros(S), np.zeros(S)
            for t in range(T - 1, -1, -1):
                r = R[t]
                ey1, ey2, ez1, eyz, ez2 = P @ y1, P @ y2, P @ z1, P @ yz, P @ z2
                y1 = (w1 * ey1).sum(axis=1)
                z1 = (w1 * (r * ey1 + g * ez1)).sum(axis=1)
                y2_new = (w2 * ey2).sum(axis=1)
                yz_new = (w2 * (r * ey2 + g * eyz)).sum(axis=1)
                z2 = (w2 * (r * r * ey2 + 2 * g * r * eyz + g * g * ez2)).sum(axis=1)
                y2, yz = y2_new, yz_new
                if overflow is None and not np.all(np.isfinite(z2)):
                    overflow = t + 1
            m, q = z1, z2
        elif kind in (Kind.SIS, Kind.ASIS):
            if kind is Kind.SIS:
                W = occupancies(problem).ratio
            elif weights is None:
                raise ValueError("ASIS needs a weight table")
            else:
                W = _weights_array(weights)
            disc = discounts(g, T)
            m, q = np.zeros(S), np.zeros(S)
            for t in range(T - 1, -1, -1):
                c = disc[t] * W[t] * R[t]
                em, eq = P @ m, P @ q
                m = (mu * (c + em)).sum(axis=1)
                q = (mu * (c * c + 2 * c * em + eq)).sum(axis=1)
                if overflow is None and not np.all(np.isfinite(q)):
                    overflow = t + 1
        else:
            raise ValueError(f"no moment recursion for {kind}")

        mean = float(p1 @ m)
        second = float(p1 @ q)
    if overflow is not None or not math.isfinite(second):
        return MomentReport(mean, math.inf, "moment_dp", str(kind), overflow or 1)
    return MomentReport(mean, _clamp(second - mean * mean, second), "moment_dp", str(kind))


@dataclass(frozen=True, eq=False)
class CovTerms:
    """Per-step covariance matrices (symmetric, T x T, 0-based indices).

    pdis[t, k] = Cov(g^t rho_{1:t+1} r_{t+1}, g^k rho_{1:k+1} r_{k+1}) and
    sis[t, k] is the same with oracle weights in place of the running ratio.
    """

    pdis: np.ndarray
    sis: np.ndarray

    @staticmethod
    def total(c: np.ndarray) -> float:
        T = c.shape[0]
        iu = np.triu_indices(T, 1)
        return float(np.trace(c) + 2.0 * c[iu].sum())


def weighted_cov(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    xc = x - p @ x
    c = (xc * p[:, None]).T @ xc
    upper = np.triu(c)
    return upper + np.triu(c, 1).T


def step_terms(problem: EvaluationProblem, batch: TrajectoryBatch) -> tuple[np.ndarray, np.ndarray]:
    """Discounted per-step PDIS and SIS summands along each path, both (N, T)."""
    disc = discounts(problem.gamma, batch.horizon)
    _, cum = ratios(problem, batch)
    pd = batch.rewards * cum * disc
    sis = batch.rewards * sis_terms(problem, batch) * disc
    return pd, sis


def exact_cov_terms(problem: EvaluationProblem, cap: int | None = None,
                    batch: TrajectoryBatch | None = None) -> CovTerms:
    batch = enumerate_paths(problem, cap=cap) if batch is None else batch
    pd, sis = step_terms(problem, batch)
    return CovTerms(weighted_cov(pd, batch.prob), weighted_cov(sis, batch.prob))


def _group_mean(keys: np.ndarray, values: np.ndarray, p: np.ndarray):
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mass = np.bincount(inv, weights=p, minlength=len(uniq))
    num = np.bincount(inv, weights=p * values, minlength=len(uniq))
    return uniq, num / mass, inv


def conditional_expectation(problem: EvaluationProblem, t: int, statistic: str = "state_action",
                            cap: int | None = None) -> dict:
    """Conditional expectation of likelihood ratios under the behavior policy, by enumeration.

    ``state_action``: ``{(s, a): E[rho_{1:t} | s_t = s, a_t = a]}``.
    ``prefix``: ``{((s_1, a_1), ..., (s_t, a_t)): E[rho_{1:T} | tau_{1:t}]}``.
    ``t`` is 1-based.
    """
    T = problem.horizon
    if not 1 <= t <= T:
        raise ValueError(f"t must lie in 1..{T}")
    if statistic == "state_action":
        batch = enumerate_paths(problem, horizon=t, cap=cap)
        _, cum = ratios(problem, batch)
        keys = np.column_stack([batch.states[:, -1], batch.actions[:, -1]])
        uniq, vals, _ = _group_mean(keys, cum[:, -1], batch.prob)
        return {(int(s), int(a)): float(v) for (s, a), v in zip(uniq, vals)}
    if statistic == "prefix":
        batch = enumerate_paths(problem, cap=cap)
        _, cum = ratios(problem, batch)
        keys = np.empty((len(batch), 2 * t), dtype=np.int64)
        keys[:, 0::2] = batch.states[:, :t]
        keys[:, 1::2] = batch.actions[:, :t]
        uniq, vals, _ = _group_mean(keys, cum[:, -1], batch.prob)
        return {tuple((int(k[2 * i]), int(k[2 * i + 1])) for i in range(t)): float(v)
                for k, v in zip(uniq, vals)}
    raise ValueError(f"unknown statistic {statistic!r}")


def return_conditioned_variance(problem: EvaluationProblem, cap: int | None = None) -> tuple[float, float]:
    """``(Var(G E[rho_{1:T} | G]), Var(G rho_{1:T}))`` with G the exact float return.

    Conditioning on a single statistic cannot increase variance, so the first
    value never exceeds the second.
    """
    batch = enumerate_paths(problem, cap=cap)
    _, cum = ratios(problem, batch)
    G = batch.rewards @ discounts(problem.gamma, batch.horizon)
    _, cond, inv = _group_mean(G[:, None], cum[:, -1], batch.prob)
    conditioned = ReturnDistribution(G * cond[inv], batch.prob)
    crude = ReturnDistribution(G * cum[:, -1], batch.prob)
    return conditioned.variance(), crude.variance()


def distribution_dp(problem: EvaluationProblem, kind, weights=None, max_atoms: int = 1_000_000) -> ReturnDistribution:
    """Exact return law by a forward pass over ``(state, running ratio, partial return)``.

    Paths are merged only when these keys are bitwise equal, so the result is
    the same law enumeration gives, with atoms grouped.  It stays small when
    few distinct partial returns exist (deterministic chains, two-lane
    problems) even though the path count is exponential.
    """
    kind = as_kind(kind)
    ensure_valid(problem)
    mdp = problem.mdp
    mu, pi = problem.behavior.probs, problem.target.probs
    P, R, T = mdp.transition, mdp.reward, mdp.horizon
    disc = discounts(mdp.gamma, T)
    if kind is Kind.SIS:
        W = occupancies(problem).ratio
    elif kind is Kind.ASIS:
        if weights is None:
            raise ValueError("ASIS needs a weight table")
        W = _weights_array(weights)
    elif kind not in (Kind.IS, Kind.PDIS):
        raise ValueError(f"no return law for {kind}")

    frontier = {(int(s), 1.0, 0.0): float(p) for s, p in enumerate(mdp.initial_dist) if p > 0}
    for t in range(T):
        nxt: dict = {}
        for (s, c, acc), p in frontier.items():
            for a in np.flatnonzero(mu[s] > 0):
                c2 = c * (pi[s, a] / mu[s, a])
                r = disc[t] * R[t, s, a]
                if kind is Kind.PDIS:
                    acc2 = acc + r * c2
                elif kind is Kind.IS:
                    acc2 = acc + r
                else:
                    acc2 = acc + r * W[t, s, a]
                pa = p * mu[s, a]
                if t == T - 1:
                    key = (-1, c2 if kind is Kind.IS else 1.0, acc2)
                    nxt[key] = nxt.get(key, 0.0) + pa
                    continue
                for s2 in np.flatnonzero(P[s, a] > 0):
                    key = (int(s2), c2, acc2)
                    nxt[key] = nxt.get(key, 0.0) + pa * P[s, a, s2]
        if len(nxt) > max_atoms:
            raise EnumerationCapError(len(nxt), max_atoms)
        frontier = nxt

    law: dict[float, float] = {}
    for (_, c, acc), p in frontier.items():
        v = c * acc if kind is Kind.IS else acc
        law[v] = law.get(v, 0.0) + p
    values = np.array(sorted(law))
    return ReturnDistribution(values, np.array([law[v] for v in values]))
