"""State-action occupancies, oracle SIS weights, KL rate and ratio diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, SupportError
from .mdp import EvaluationProblem, TabularMdp, ensure_valid, state_marginals

STATIONARY_TOL = 1e-10
STATIONARY_MAX_ITER = 1_000_000


@dataclass(frozen=True, eq=False)
class OccupancyTables:
    """Occupancy tensors; every per-time array is indexed ``[t, s, a]``.

    ``ratio`` is the oracle SIS weight ``d_pi_t / d_mu_t`` with 0 wherever
    both occupancies vanish.
    """

    d_mu: np.ndarray
    d_pi: np.ndarray
    d_mu_avg: np.ndarray
    ratio: np.ndarray
    stationary_mu: np.ndarray | None = None
    stationary_pi: np.ndarray | None = None

    def state_ratio(self) -> np.ndarray:
        """``d_pi_t(s) / d_mu_t(s)`` as a (T, S) array (0 where unreachable under mu)."""
        dm, dp = self.d_mu.sum(axis=2), self.d_pi.sum(axis=2)
        out = np.zeros_like(dm)
        np.divide(dp, dm, out=out, where=dm > 0)
        return out

    def rows(self):
        """Yield ``(t, s, a, d_mu, d_pi, ratio)`` with 1-based t, for CSV dumps."""
        T, S, A = self.d_mu.shape
        for t in range(T):
            for s in range(S):
                for a in range(A):
                    yield t + 1, s, a, float(self.d_mu[t, s, a]), float(self.d_pi[t, s, a]), float(self.ratio[t, s, a])


@dataclass(frozen=True)
class ProblemDiagnostics:
    c: float
    U_rho: float
    U_s: float
    M_rho_sq: float
    U_rho_at: tuple[int, int] | None = None

    def as_dict(self) -> dict:
        return {"c": self.c, "U_rho": self.U_rho, "U_s": self.U_s, "M_rho_sq": self.M_rho_sq}


def _sa_occupancy(mdp: TabularMdp, policy: np.ndarray, horizon: int | None = None) -> np.ndarray:
    return state_marginals(mdp, policy, horizon)[:, :, None] * policy[None, :, :]


def occupancies(problem: EvaluationProblem, with_stationary: bool = False) -> OccupancyTables:
    ensure_valid(problem)
    mdp = problem.mdp
    mu, pi = problem.behavior.probs, problem.target.probs
    d_mu = _sa_occupancy(mdp, mu)
    d_pi = _sa_occupancy(mdp, pi)

    bad = np.argwhere((d_pi > 0) & (d_mu == 0))
    if bad.size:
        t, s, a = (int(x) for x in bad[0])
        raise SupportError("target occupancy is positive where behavior occupancy is zero", t + 1, s, a)
    ratio = np.zeros_like(d_mu)
    np.divide(d_pi, d_mu, out=ratio, where=d_mu > 0)

    T = mdp.horizon
    gamma = mdp.gamma
    if gamma == 0.0:
        # limit of the discount-weighted average as gamma -> 0
        d_avg = d_mu[0].copy()
    else:
        wts = gamma ** np.arange(1, T + 1)
        d_avg = np.tensordot(wts, d_mu, axes=1) / wts.sum()

    st_mu = st_pi = None
    if with_stationary:
        st_mu = stationary_distribution(mdp, mu)
        st_pi = stationary_distribution(mdp, pi)
    return OccupancyTables(d_mu, d_pi, d_avg, ratio, st_mu, st_pi)


def oracle_weights(problem: EvaluationProblem) -> np.ndarray:
    """The (T, S, A) SIS weight table ``d_pi_t(s, a) / d_mu_t(s, a)``."""
    return occupancies(problem).ratio


def stationary_distribution(mdp: TabularMdp, policy, tol: float = STATIONARY_TOL,
                            max_iter: int = STATIONARY_MAX_ITER,
                            start: np.ndarray | None = None) -> np.ndarray:
    """Stationary state-action distribution of the policy-induced chain, by power iteration.

    Iterates ``d <- d P`` from ``start`` (default: the initial distribution)
    until ``||d P - d||_1 <= tol``.  Periodic chains never settle and raise
    ConvergenceError.
    """
    probs = getattr(policy, "probs", policy)
    p_pol = np.einsum("sa,sax->sx", probs, mdp.transition)
    d = np.array(mdp.initial_dist if start is None else start, dtype=float)
    residual = math.inf
    for it in range(1, max_iter + 1):
        nxt = d @ p_pol
        residual = float(np.abs(nxt - d).sum())
        d = nxt
        if residual <= tol:
            d = d / d.sum()
            return d[:, None] * probs
    raise ConvergenceError("stationary distribution did not converge; chain may be periodic or reducible",
                           residual, max_iter)


def _kl_terms(mu: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Per-state ``KL(mu(.|s) || pi(.|s))``; +inf where mu > 0 = pi."""
    out = np.zeros(mu.shape[0])
    for s in range(mu.shape[0]):
        m, p = mu[s], pi[s]
        sup = m > 0
        if np.any(p[sup] == 0):
            out[s] = math.inf
        else:
            out[s] = float(np.sum(m[sup] * np.log(m[sup] / p[sup])))
    return out


def kl_rate(problem: EvaluationProblem, stationary_mu: np.ndarray | None = None) -> float:
    """``c = E_{s ~ d_mu}[KL(mu(.|s) || pi(.|s))]`` under the stationary behavior distribution.

    Returns +inf when pi puts zero mass on an action mu takes in a state with
    positive stationary mass.
    """
    ensure_valid(problem)
    mu, pi = problem.behavior.probs, problem.target.probs
    if stationary_mu is None:
        stationary_mu = stationary_distribution(problem.mdp, mu)
    return _kl_rate(mu, pi, stationary_mu.sum(axis=1))


def _kl_rate(mu: np.ndarray, pi: np.ndarray, ds: np.ndarray) -> float:
    kl = _kl_terms(mu, pi)
    live = ds > 0
    if np.any(np.isinf(kl[live])):
        return math.inf
    return max(float(np.dot(ds[live], kl[live])), 0.0)


def diagnostics(problem: EvaluationProblem) -> ProblemDiagnostics:
    """KL rate and the ratio suprema ``U_rho``, ``U_s`` and ``M_rho^2``.

    ``U_rho`` and ``M_rho^2`` are taken over pairs the behavior policy reaches
    within the horizon; ``U_s`` compares stationary state marginals.  Absolute
    continuity failures are reported as ``U_rho = inf`` rather than raised.
    """
    ensure_valid(problem, allow=("absolute_continuity",))
    mdp = problem.mdp
    mu, pi = problem.behavior.probs, problem.target.probs
    reach = state_marginals(mdp, mu).max(axis=0) > 0
    sa = reach[:, None] & (mu > 0)

    ratio = problem.ratio_table()
    u_rho, at = 0.0, None
    for s, a in zip(*np.nonzero(sa)):
        if ratio[s, a] > u_rho:
            u_rho, at = float(ratio[s, a]), (int(s), int(a))
    # pi > 0 = mu on a reachable state: unbounded ratio
    for s, a in zip(*np.nonzero(reach[:, None] & (mu == 0) & (pi > 0))):
        u_rho, at = math.inf, (int(s), int(a))
        break

    second = np.where(mu > 0, pi ** 2 / np.where(mu > 0, mu, 1.0), 0.0).sum(axis=1)
    second[np.any((mu == 0) & (pi > 0), axis=1)] = math.inf
    m_rho_sq = float(second[reach].max())

    st_mu = stationary_distribution(mdp, mu).sum(axis=1)
    st_pi = stationary_distribution(mdp, pi).sum(axis=1)
    live = st_mu > 0
    u_s = float((st_pi[live] / st_mu[live]).max())
    c = _kl_rate(mu, pi, st_mu)
    return ProblemDiagnostics(c=c, U_rho=u_rho, U_s=u_s, M_rho_sq=m_rho_sq, U_rho_at=at)


def conditional_weight_check(problem: EvaluationProblem, t: int, cap: int | None = None) -> float:
    """Largest gap between ``E_mu[rho_{1:t} | s_t, a_t]`` (by enumeration) and the oracle weight.

    ``t`` is 1-based.  The maximum runs over pairs with positive behavior
    occupancy at step ``t``.
    """
    from .exact import conditional_expectation

    table = conditional_expectation(problem, t, "state_action", cap=cap)
    w = occupancies(problem).ratio[t - 1]
    gap = 0.0
    for (s, a), value in table.items():
        gap = max(gap, abs(value - w[s, a]))
    return gap
