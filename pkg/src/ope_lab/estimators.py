"""Per-trajectory returns and batch estimates for IS, PDIS, SIS, ASIS and RCIS."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import SupportError
from .mdp import EvaluationProblem, Trajectory, TrajectoryBatch, as_batch
from .occupancy import OccupancyTables, occupancies

RANK_TOL = 1e-10


class Kind(str, Enum):
    IS = "IS"
    PDIS = "PDIS"
    SIS = "SIS"
    ASIS = "ASIS"
    RCIS = "RCIS"

    def __str__(self) -> str:
        return self.value


def as_kind(kind) -> Kind:
    return kind if isinstance(kind, Kind) else Kind(str(kind).upper())


@dataclass(frozen=True, eq=False)
class WeightTable:
    """Approximate (or oracle) density-ratio table ``w_t(s, a)``, shape (T, S, A)."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 3:
            raise ValueError(f"weight table must be (T, S, A), got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weight table entries must be finite and non-negative")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)


def _weights_array(weights) -> np.ndarray:
    if isinstance(weights, WeightTable):
        return weights.w
    return WeightTable(weights).w


def discounts(gamma: float, T: int) -> np.ndarray:
    # 0.0 ** 0 == 1, so gamma = 0 keeps the first reward only
    return np.power(float(gamma), np.arange(T, dtype=float))


def ratios(problem: EvaluationProblem, batch: TrajectoryBatch) -> tuple[np.ndarray, np.ndarray]:
    """Per-step ratios and running products, both (N, T)."""
    mu, pi = problem.behavior.probs, problem.target.probs
    m = mu[batch.states, batch.actions]
    if np.any(m <= 0):
        i, t = (int(x) for x in np.argwhere(m <= 0)[0])
        raise SupportError("behavior probability is zero", t + 1, int(batch.states[i, t]), int(batch.actions[i, t]))
    rho = pi[batch.states, batch.actions] / m
    return rho, np.cumprod(rho, axis=1)


def _lookup(table: np.ndarray, batch: TrajectoryBatch) -> np.ndarray:
    T = batch.horizon
    if table.shape[0] < T:
        raise ValueError(f"weight table covers {table.shape[0]} steps, trajectories have {T}")
    return table[np.arange(T)[None, :], batch.states, batch.actions]


def sis_terms(problem: EvaluationProblem, batch: TrajectoryBatch,
              tables: OccupancyTables | None = None) -> np.ndarray:
    """Oracle weights ``w*_t(s_t, a_t)`` along each trajectory, (N, T)."""
    tables = occupancies(problem) if tables is None else tables
    dm = _lookup(tables.d_mu, batch)
    if np.any(dm <= 0):
        i, t = (int(x) for x in np.argwhere(dm <= 0)[0])
        raise SupportError("behavior occupancy is zero", t + 1, int(batch.states[i, t]), int(batch.actions[i, t]))
    return _lookup(tables.ratio, batch)


def returns(problem: EvaluationProblem, kind, batch, weights=None,
            tables: OccupancyTables | None = None) -> np.ndarray:
    """Per-trajectory estimator values for IS, PDIS, SIS or ASIS, shape (N,)."""
    kind = as_kind(kind)
    batch = as_batch(batch)
    disc = discounts(problem.gamma, batch.horizon)
    r = batch.rewards
    if kind is Kind.IS:
        _, cum = ratios(problem, batch)
        return cum[:, -1] * (r @ disc)
    if kind is Kind.PDIS:
        _, cum = ratios(problem, batch)
        return (r * cum) @ disc
    if kind is Kind.SIS:
        return (r * sis_terms(problem, batch, tables)) @ disc
    if kind is Kind.ASIS:
        if weights is None:
            raise ValueError("ASIS needs a weight table")
        return (r * _lookup(_weights_array(weights), batch)) @ disc
    raise ValueError(f"{kind} has no per-trajectory return; use rcis_estimate")


def is_return(problem: EvaluationProblem, trajectory: Trajectory) -> float:
    return float(returns(problem, Kind.IS, trajectory)[0])


def pdis_return(problem: EvaluationProblem, trajectory: Trajectory) -> float:
    return float(returns(problem, Kind.PDIS, trajectory)[0])


def sis_return(problem: EvaluationProblem, tables: OccupancyTables | None, trajectory: Trajectory) -> float:
    return float(returns(problem, Kind.SIS, trajectory, tables=tables)[0])


def asis_return(problem: EvaluationProblem, weights, trajectory: Trajectory) -> float:
    return float(returns(problem, Kind.ASIS, trajectory, weights=weights)[0])


@dataclass(frozen=True)
class BatchEstimate:
    estimate: float
    n: int
    sample_variance: float

    @property
    def variance(self) -> float:
        if self.n < 2:
            raise ValueError("sample variance needs at least 2 trajectories")
        return self.sample_variance

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.n)


def summarize(values: np.ndarray) -> BatchEstimate:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty batch")
    var = float(np.var(values, ddof=1)) if values.size > 1 else math.nan
    return BatchEstimate(float(np.mean(values)), int(values.size), var)


def batch_estimate(problem: EvaluationProblem, kind, batch, weights=None) -> BatchEstimate:
    """Plain Monte Carlo average of per-trajectory returns (no probability weighting)."""
    kind = as_kind(kind)
    batch = as_batch(batch)
    if len(batch) == 0:
        raise ValueError("empty batch")
    if kind is Kind.RCIS:
        res = rcis_estimate(problem, batch)
        vals = res.per_trajectory
    else:
        vals = returns(problem, kind, batch, weights=weights)
    return summarize(vals)


@dataclass(frozen=True, eq=False)
class RcisResult:
    estimate: float
    coef: np.ndarray
    fitted_weights: np.ndarray
    per_trajectory: np.ndarray
    rank_deficient: bool


def _design(problem: EvaluationProblem, batch: TrajectoryBatch, statistic) -> np.ndarray:
    disc = discounts(problem.gamma, batch.horizon)
    if callable(statistic):
        return np.asarray(statistic(batch), dtype=float)
    if statistic == "final_return":
        return np.column_stack([batch.rewards @ disc, np.ones(len(batch))])
    if statistic == "rewards":
        return np.column_stack([batch.rewards * disc, np.ones(len(batch))])
    raise ValueError(f"unknown statistic {statistic!r}")


def rcis_estimate(problem: EvaluationProblem, batch, statistic: str | Callable = "final_return") -> RcisResult:
    """Return-conditional IS with least-squares weights.

    Regresses ``rho_{1:T}`` on the chosen features of each trajectory and
    averages ``G * fitted_weight``.  Whenever the return lies in the span of
    the features, the residuals are orthogonal to it and the estimate equals
    the crude IS average on the same batch.  A callable ``statistic`` maps a
    batch to its (N, p) design matrix.
    """
    batch = as_batch(batch)
    if len(batch) < 2:
        raise ValueError("RCIS needs at least 2 trajectories")
    _, cum = ratios(problem, batch)
    y = cum[:, -1]
    G = batch.rewards @ discounts(problem.gamma, batch.horizon)
    phi = _design(problem, batch, statistic)

    sv = np.linalg.svd(phi, compute_uv=False)
    deficient = sv.size == 0 or sv[-1] <= RANK_TOL * sv[0] or phi.shape[0] < phi.shape[1]
    if deficient:
        coef = np.linalg.pinv(phi, rcond=RANK_TOL) @ y
    else:
        coef = np.linalg.solve(phi.T @ phi, phi.T @ y)
    y_hat = phi @ coef
    per = G * y_hat
    return RcisResult(float(np.mean(per)), coef, y_hat, per, bool(deficient))
