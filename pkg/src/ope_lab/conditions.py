"""Sufficient conditions for the IS/PDIS/SIS variance orderings, checked exactly by enumeration."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .estimators import discounts, ratios, returns
from .exact import ReturnDistribution, _group_mean, exact_cov_terms
from .mdp import EvaluationProblem, TrajectoryBatch, ensure_valid, state_marginals
from .paths import enumerate_paths

COV_TOL = 1e-12
ORDER_SLACK = 1e-10


@dataclass(frozen=True)
class Witness:
    """A violated pair; ``t`` and ``k`` are 1-based absolute steps."""

    t: int
    k: int
    lhs: float
    rhs: float
    start_time: int = 1
    start_state: int | None = None


@dataclass(frozen=True)
class ConditionReport:
    holds: bool
    witnesses: list[Witness]
    margin: float

    def as_dict(self) -> dict:
        return {"holds": self.holds, "margin": self.margin, "witnesses": [asdict(w) for w in self.witnesses]}


def _report(pairs: list[tuple[int, int, float, float, int, int | None]]) -> ConditionReport:
    margin = min((lhs - rhs for _, _, lhs, rhs, _, _ in pairs), default=0.0)
    witnesses = [Witness(t, k, lhs, rhs, u, s) for t, k, lhs, rhs, u, s in pairs if lhs - rhs < -COV_TOL]
    return ConditionReport(not witnesses, witnesses, float(margin))


def _ratio_reward_cov(batch: TrajectoryBatch, rho: np.ndarray) -> np.ndarray:
    """``C[t, k] = Cov(rho_{:k}, r_t rho_{:k})`` with running products restarted at the batch start."""
    p = batch.prob / batch.prob.sum()
    cum = np.cumprod(rho, axis=1)
    pr = p[:, None] * batch.rewards
    e_r_c2 = pr.T @ (cum * cum)
    e_r_c = pr.T @ cum
    e_c = p @ cum
    return e_r_c2 - e_r_c * e_c[None, :]


def _pairs_from(c: np.ndarray, offset: int, state: int | None):
    T = c.shape[0]
    return [(t + 1 + offset, k + 1 + offset, float(c[t, k]), 0.0, offset + 1, state)
            for t in range(T) for k in range(t, T)]


def theorem1_condition(problem: EvaluationProblem, scope: str = "restart", cap: int | None = None) -> ConditionReport:
    """Check ``Cov(rho_{1:k}, r_t rho_{1:k}) >= 0`` for every ``t <= k``.

    ``scope="literal"`` checks it under the initial distribution and, when that
    is not a point mass, from each initial state separately.  ``"restart"``
    (the default) also restarts the process at every step ``u`` from every
    state reachable at ``u``, checking ``Cov(rho_{u:k}, r_t rho_{u:k})`` for
    ``u <= t <= k``.  The implication Var(PDIS) <= Var(IS) is only guaranteed
    under the restart scope.
    """
    if scope not in ("literal", "restart"):
        raise ValueError(f"scope must be 'literal' or 'restart', got {scope!r}")
    ensure_valid(problem)
    mdp = problem.mdp
    S, T = mdp.num_states, mdp.horizon
    pairs = []

    full = enumerate_paths(problem, cap=cap)
    pairs += _pairs_from(_ratio_reward_cov(full, ratios(problem, full)[0]), 0, None)

    reach = state_marginals(mdp, problem.behavior.probs) > 0
    point_mass = np.count_nonzero(mdp.initial_dist) == 1
    starts = [] if point_mass else [(0, s) for s in range(S) if reach[0, s]]
    if scope == "restart":
        starts += [(u, s) for u in range(1, T) for s in range(S) if reach[u, s]]
    for u, s in starts:
        e = np.zeros(S)
        e[s] = 1.0
        batch = enumerate_paths(problem, cap=cap, initial=e, start_time=u)
        pairs += _pairs_from(_ratio_reward_cov(batch, ratios(problem, batch)[0]), u, s)
    return _report(pairs)


def theorem2_condition(problem: EvaluationProblem, cap: int | None = None) -> ConditionReport:
    """Check ``Cov(rho_{1:t} r_t, rho_{1:k} r_k) >= Cov(w_t r_t, w_k r_k)`` for every ``t <= k``.

    Both sides carry the discount factors, which scale them equally.
    """
    terms = exact_cov_terms(problem, cap=cap)
    T = terms.pdis.shape[0]
    pairs = [(t + 1, k + 1, float(terms.pdis[t, k]), float(terms.sis[t, k]), 1, None)
             for t in range(T) for k in range(t, T)]
    return _report(pairs)


def _prefix_keys(batch: TrajectoryBatch, t: int) -> np.ndarray:
    keys = np.empty((len(batch), 2 * t), dtype=np.int64)
    keys[:, 0::2] = batch.states[:, :t]
    keys[:, 1::2] = batch.actions[:, :t]
    return keys


def lemma2_gap(problem: EvaluationProblem, conditioning: str = "prefix", cap: int | None = None) -> tuple[float, float]:
    """Return ``(Var(sum Y) - Var(sum E[Y_t|X_t]), 2 sum_{t<k} (E[Y_t Y_k] - E[E_t E_k]))``.

    ``prefix``: ``Y_t = g^(t-1) r_t rho_{1:T}`` given the first t steps, so the
    variance difference is Var(IS) - Var(PDIS).  ``state_action``:
    ``Y_t = g^(t-1) r_t rho_{1:t}`` given ``(s_t, a_t)``, i.e. Var(PDIS) -
    Var(SIS).  ``identity`` conditions on the whole trajectory.
    Conditional expectations come from grouping the enumerated paths.
    """
    batch = enumerate_paths(problem, cap=cap)
    p = batch.prob
    _, cum = ratios(problem, batch)
    disc = discounts(problem.gamma, batch.horizon)
    T = batch.horizon
    if conditioning == "prefix":
        Y = batch.rewards * disc * cum[:, -1:]
    elif conditioning in ("state_action", "identity"):
        Y = batch.rewards * disc * cum
    else:
        raise ValueError(f"unknown conditioning {conditioning!r}")

    if conditioning == "identity":
        Z = Y
    else:
        Z = np.empty_like(Y)
        for t in range(T):
            if conditioning == "prefix":
                keys = _prefix_keys(batch, t + 1)
            else:
                keys = np.column_stack([batch.states[:, t], batch.actions[:, t]])
            _, cond, inv = _group_mean(keys, Y[:, t], p)
            Z[:, t] = cond[inv]

    lhs = ReturnDistribution(Y.sum(axis=1), p).variance() - ReturnDistribution(Z.sum(axis=1), p).variance()
    cross = (p[:, None] * Y).T @ Y - (p[:, None] * Z).T @ Z
    rhs = 2.0 * float(np.triu(cross, 1).sum())
    return float(lhs), rhs


@dataclass
class ImplicationSummary:
    which: str
    n: int
    n_condition_holds: int = 0
    n_ordering_holds: int = 0
    n_ordering_holds_given_condition: int = 0
    violations: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


_ORDERINGS = {"thm1": ("PDIS", "IS"), "thm2": ("SIS", "PDIS")}


def _check_one(problem: EvaluationProblem, which: str, scope: str, cap: int | None):
    report = theorem1_condition(problem, scope, cap) if which == "thm1" else theorem2_condition(problem, cap)
    batch = enumerate_paths(problem, cap=cap)
    lo, hi = _ORDERINGS[which]
    v_lo = ReturnDistribution(returns(problem, lo, batch), batch.prob).variance()
    v_hi = ReturnDistribution(returns(problem, hi, batch), batch.prob).variance()
    return report, v_lo, v_hi


def verify_implication(population: Callable[[int], EvaluationProblem], n: int, which: str = "thm1",
                       scope: str = "restart", workers: int = 1, cap: int | None = None) -> ImplicationSummary:
    """Count problems where the condition holds and check that the variance ordering follows.

    ``population(i)`` builds problem ``i``.  A violation is a problem whose
    condition holds while the lower-variance side exceeds the other by more
    than 1e-10.  Results are collected in index order whatever ``workers`` is.
    """
    if which not in _ORDERINGS:
        raise ValueError(f"which must be 'thm1' or 'thm2', got {which!r}")
    lo, hi = _ORDERINGS[which]

    def job(i):
        return _check_one(population(i), which, scope, cap)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, range(n)))
    else:
        results = [job(i) for i in range(n)]

    summary = ImplicationSummary(which, n)
    for i, (report, v_lo, v_hi) in enumerate(results):
        ordered = v_lo <= v_hi + ORDER_SLACK
        summary.n_ordering_holds += ordered
        if report.holds:
            summary.n_condition_holds += 1
            summary.n_ordering_holds_given_condition += ordered
            if not ordered:
                summary.violations.append({"index": i, f"var_{lo}": v_lo, f"var_{hi}": v_hi,
                                           "margin": report.margin})
    return summary
