"""Horizon sweeps, PDIS regime classification, ASIS error bound and log-ratio rate checks."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EnumerationCapError
from .estimators import Kind, WeightTable, as_kind, returns, summarize
from .exact import exact_moments
from .mdp import EvaluationProblem, target_value
from .montecarlo import SamplerConfig, sample_trajectories
from .occupancy import diagnostics, kl_rate, occupancies, stationary_distribution

FIT_T_MIN = 4
POLY_DEGREE_MAX = 2.5
METHODS = ("exact_dp", "enumeration", "monte_carlo")

Family = Callable[[int], EvaluationProblem]


@dataclass(frozen=True)
class SweepRow:
    estimator: str
    horizon: int
    gamma: float
    mean: float
    variance: float
    method: str
    seed: int | None = None


@dataclass(frozen=True)
class Fit:
    """Least-squares slopes of log-variance against T (alpha) and log T (beta)."""

    estimator: str
    alpha: float | None
    beta: float | None
    t_min: int | None
    t_max: int | None
    residual: dict | None
    quadratic_cap: float | None = None
    diagnostic: str = ""

    def as_dict(self) -> dict:
        d = {"estimator": self.estimator, "alpha": self.alpha, "beta": self.beta,
             "t_min": self.t_min, "t_max": self.t_max, "residual": self.residual,
             "quadratic_cap": self.quadratic_cap}
        if self.diagnostic:
            d["diagnostic"] = self.diagnostic
        return d


@dataclass
class SweepResult:
    rows: list[SweepRow]
    fits: dict[str, Fit] = field(default_factory=dict)

    def variances(self, kind) -> tuple[np.ndarray, np.ndarray]:
        name = str(as_kind(kind))
        sel = [r for r in self.rows if r.estimator == name]
        return np.array([r.horizon for r in sel]), np.array([r.variance for r in sel])


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Slope and RMS residual of ``y ~ a + b x``."""
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ coef
    return float(coef[1]), float(np.sqrt(np.mean(res ** 2)))


def fit_growth(estimator: str, horizons, variances, t_min: int = FIT_T_MIN) -> Fit:
    """Fit exponential and polynomial growth over rows with ``T >= t_min`` and finite positive variance."""
    T = np.asarray(horizons, dtype=float)
    v = np.asarray(variances, dtype=float)
    keep = (T >= t_min) & np.isfinite(v) & (v > 0)
    if np.count_nonzero(keep) < 2:
        return Fit(estimator, None, None, None, None, None, None,
                   "fit skipped: fewer than two rows with T >= %d and finite positive variance" % t_min)
    T, v = T[keep], v[keep]
    logv = np.log(v)
    alpha, r_exp = _ols(T, logv)
    beta, r_poly = _ols(np.log(T), logv)
    return Fit(estimator, alpha, beta, int(T.min()), int(T.max()),
               {"exponential": r_exp, "polynomial": r_poly}, float(np.max(v / T ** 2)))


def _row(family: Family, T: int, kind: Kind, method: str, mc: SamplerConfig | None, weights) -> SweepRow:
    problem = family(T)
    w = weights(problem) if callable(weights) else weights
    if method == "monte_carlo":
        if mc is None:
            raise ValueError("monte_carlo sweeps need a sampler config")
        batch = sample_trajectories(problem, mc)
        est = summarize(returns(problem, kind, batch, weights=w))
        return SweepRow(str(kind), T, problem.gamma, est.estimate, est.sample_variance, method, mc.seed)
    try:
        rep = exact_moments(problem, kind, method="moment_dp" if method == "exact_dp" else "enumeration", weights=w)
    except EnumerationCapError:
        if mc is None:
            rep = exact_moments(problem, kind, method="moment_dp", weights=w)
            return SweepRow(str(kind), T, problem.gamma, rep.mean, rep.variance, "exact_dp")
        return _row(family, T, kind, "monte_carlo", mc, weights)
    return SweepRow(str(kind), T, problem.gamma, rep.mean, rep.variance, method)


def horizon_sweep(family: Family, t_grid: Sequence[int], kinds: Sequence = ("IS", "PDIS", "SIS"),
                  method: str = "exact_dp", mc_config: SamplerConfig | None = None, workers: int = 1,
                  weights=None, t_min: int = FIT_T_MIN) -> SweepResult:
    """One row per (kind, T) plus per-kind growth fits.

    ``enumeration`` falls back to Monte Carlo (or to the moment recursion when
    no sampler config is given) once the path count exceeds the cap.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    grid = [int(T) for T in t_grid]
    if not grid:
        raise ValueError("empty horizon grid")
    kinds = [as_kind(k) for k in kinds]
    jobs = [(k, T) for k in kinds for T in grid]

    def run(job):
        k, T = job
        return _row(family, T, k, method, mc_config, weights)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    result = SweepResult(rows)
    for k in kinds:
        T, v = result.variances(k)
        result.fits[str(k)] = fit_growth(str(k), T, v, t_min)
    return result


@dataclass(frozen=True)
class RegimeRow:
    gamma: float
    alpha: float | None
    beta: float | None
    u_rho_gamma: float
    classification: str
    polynomial_condition: bool
    exponential_condition: bool


def pdis_regime(family: Family, t_grid: Sequence[int], gamma_grid: Sequence[float],
                workers: int = 1) -> list[RegimeRow]:
    """Classify PDIS variance growth per discount factor.

    The fits use the upper half of the horizon grid (and ``T >= 4``) so the
    transient does not dominate; growth with fitted degree at most 2.5 is
    called polynomial.  Two sufficient conditions are evaluated alongside:
    ``U_rho * gamma <= 1`` for polynomial growth, and for exponential growth
    ``gamma = 1`` with a positive KL rate and positive stationary target reward.
    """
    grid = sorted(int(T) for T in t_grid)
    tail = [T for T in grid if T >= max(FIT_T_MIN, grid[len(grid) // 2])]
    base = family(grid[0])
    diag = diagnostics(base)
    st_pi = stationary_distribution(base.mdp, base.target.probs)
    stat_reward = float((st_pi * base.mdp.reward[-1]).sum())

    rows = []
    for g in gamma_grid:
        g = float(g)
        sweep = horizon_sweep(lambda T: family(T).with_gamma(g), tail, ("PDIS",), "exact_dp", workers=workers)
        fit = sweep.fits["PDIS"]
        if fit.beta is None:
            # constant zero variance counts as polynomial
            cls = "polynomial"
        else:
            cls = "polynomial" if fit.beta <= POLY_DEGREE_MAX else "exponential"
        urg = diag.U_rho * g
        rows.append(RegimeRow(g, fit.alpha, fit.beta, urg, cls, urg <= 1.0,
                              g == 1.0 and 0 < diag.c < math.inf and stat_reward > 0))
    return rows


@dataclass(frozen=True)
class AsisRow:
    epsilon_target: float
    epsilon_realized: float
    mse: float
    bias: float
    variance: float
    sis_variance: float
    bound: float
    mc_mse: float | None = None

    @property
    def holds(self) -> bool:
        return self.mse <= self.bound + 1e-9

    def as_dict(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds
        return d


def weight_error(weights: np.ndarray, oracle: np.ndarray, d_mu: np.ndarray) -> float:
    """``max_t E_{d_mu_t}[(w_t - w*_t)^2]``."""
    return float(((weights - oracle) ** 2 * d_mu).sum(axis=(1, 2)).max())


def perturb_weights(oracle: np.ndarray, d_mu: np.ndarray, epsilon: float, noise: np.ndarray,
                    rel_tol: float = 0.01, max_iter: int = 200) -> np.ndarray:
    """Scale ``noise`` so the clipped table ``max(w* + s * noise, 0)`` has weight error ``epsilon``.

    Only entries with positive behavior occupancy are perturbed.  The error is
    nondecreasing in the scale, so bisection reaches the target within
    ``rel_tol``.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if epsilon == 0:
        return oracle.copy()
    z = np.where(d_mu > 0, noise, 0.0)

    def table(scale):
        return np.maximum(oracle + scale * z, 0.0)

    def err(scale):
        return weight_error(table(scale), oracle, d_mu)

    lo, hi = 0.0, 1.0
    while err(hi) < epsilon:
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            raise ValueError("perturbation cannot reach the requested weight error")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        e = err(mid)
        if abs(e - epsilon) <= rel_tol * epsilon:
            return table(mid)
        lo, hi = (mid, hi) if e < epsilon else (lo, mid)
    return table(0.5 * (lo + hi))


def asis_experiment(problem: EvaluationProblem, epsilon_grid: Sequence[float], perturbation_seed: int,
                    mc_config: SamplerConfig | None = None) -> list[AsisRow]:
    """Exact MSE of SIS with perturbed weights against ``2 Var(SIS) + 2 T^2 eps``.

    One Gaussian noise table is drawn from ``perturbation_seed`` and rescaled
    for every target error.  MSE is variance plus squared bias, both from the
    moment recursion; with a sampler config a Monte Carlo MSE is added.
    """
    occ = occupancies(problem)
    oracle, d_mu = occ.ratio, occ.d_mu
    noise = np.random.default_rng(perturbation_seed).standard_normal(oracle.shape)
    v_pi = target_value(problem)
    T = problem.horizon
    var_sis = exact_moments(problem, "SIS", method="moment_dp").variance
    batch = sample_trajectories(problem, mc_config) if mc_config is not None else None

    rows = []
    for eps in epsilon_grid:
        w = perturb_weights(oracle, d_mu, float(eps), noise)
        realized = weight_error(w, oracle, d_mu)
        rep = exact_moments(problem, "ASIS", method="moment_dp", weights=WeightTable(w))
        bias = rep.mean - v_pi
        mc_mse = None
        if batch is not None:
            vals = returns(problem, "ASIS", batch, weights=w)
            mc_mse = float(np.mean((vals - v_pi) ** 2))
        rows.append(AsisRow(float(eps), realized, rep.variance + bias ** 2, bias, rep.variance, var_sis,
                            2 * var_sis + 2 * T * T * realized, mc_mse))
    return rows


@dataclass(frozen=True)
class RateCheck:
    horizon: int
    empirical_mean: float
    neg_c: float
    deviation: float
    stderr: float
    near_zero_fraction: float
    n_used: int
    n_zero_ratio: int

    def as_dict(self) -> dict:
        return asdict(self)


def likelihood_rate_check(problem: EvaluationProblem, T: int, mc_config: SamplerConfig) -> RateCheck:
    """Compare the sample mean of ``(1/T) log rho_{1:T}`` with ``-c``.

    Trajectories with a zero ratio are excluded and counted.  The near-zero
    fraction counts trajectories with ``rho_{1:T} < exp(-c T / 2)``.
    """
    prob = problem.with_horizon(int(T))
    c = kl_rate(prob)
    batch = sample_trajectories(prob, mc_config)
    ratio = prob.ratio_table()[batch.states, batch.actions]
    ok = np.all(ratio > 0, axis=1)
    log_total = np.log(ratio[ok]).sum(axis=1)
    per_step = log_total / T
    n_used = int(ok.sum())
    if n_used == 0:
        raise ValueError("every sampled trajectory has a zero likelihood ratio")
    mean = float(per_step.mean())
    stderr = float(per_step.std(ddof=1) / math.sqrt(n_used)) if n_used > 1 else math.nan
    near_zero = float(np.mean(log_total < -c * T / 2)) if c > 0 else 0.0
    return RateCheck(int(T), mean, -c, abs(mean + c), stderr, near_zero, n_used, len(batch) - n_used)
