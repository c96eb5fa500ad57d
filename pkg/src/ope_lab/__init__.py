"""Importance-sampling estimators for tabular off-policy evaluation with exact variance oracles."""
from .errors import (ConfigError, ConvergenceError, EnumerationCapError, InvalidProblemError, OpeLabError,
                     SupportError)
from .estimators import (BatchEstimate, Kind, RcisResult, WeightTable, asis_return, batch_estimate, is_return,
                         pdis_return, rcis_estimate, returns, sis_return)
from .exact import (CovTerms, MomentReport, ReturnDistribution, conditional_expectation, distribution_dp,
                    enumerate_returns, exact_cov_terms, exact_moments, moment_dp_variance, return_conditioned_variance)
from .mdp import (EvaluationProblem, PolicyTable, TabularMdp, Trajectory, TrajectoryBatch, Violation,
                  target_value, validate_problem)
from .occupancy import (OccupancyTables, ProblemDiagnostics, conditional_weight_check, diagnostics, kl_rate,
                        occupancies, oracle_weights, stationary_distribution)
from .paths import enumerate_paths
from .conditions import (ConditionReport, ImplicationSummary, Witness, lemma2_gap, theorem1_condition,
                         theorem2_condition, verify_implication)
from .scenarios import (CounterexampleFixture, counterexample_fixture, counterexample_mdp, random_ergodic,
                        random_problem, two_lane)
from .montecarlo import SamplerConfig, convergence_curve, estimator_stats, sample_trajectories
from .sweeps import (SweepResult, asis_experiment, horizon_sweep, likelihood_rate_check, pdis_regime)

__version__ = "0.1.0"
