import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ope_lab.errors import ConvergenceError, InvalidProblemError
from ope_lab.mdp import EvaluationProblem, PolicyTable, TabularMdp
from ope_lab.occupancy import (conditional_weight_check, diagnostics, kl_rate, occupancies, stationary_distribution)
from ope_lab.paths import enumerate_paths
from ope_lab.scenarios import counterexample_mdp, random_ergodic, random_problem, two_lane

from conftest import make_problem, single_state


def test_first_step_ratio_is_policy_ratio():
    p = random_ergodic(1, 4, 3, 3, 1.0, 0.5)
    occ = occupancies(p)
    assert np.allclose(occ.ratio[0, 0], p.target.probs[0] / p.behavior.probs[0], rtol=0, atol=1e-15)


def test_counterexample_second_step_ratio():
    p = counterexample_mdp(1)
    occ = occupancies(p)
    assert occ.d_mu[1, 1].sum() == pytest.approx(1.0) and occ.d_pi[1, 1].sum() == pytest.approx(1.0)
    assert np.allclose(occ.ratio[1, 1], [1.2, 0.8], atol=1e-15)


def test_on_policy_ratios_are_one(on_policy):
    occ = occupancies(on_policy)
    assert np.all(occ.ratio[occ.d_mu > 0] == 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 1000))
def test_occupancy_invariants(seed, index):
    p = random_problem(seed, index)
    occ = occupancies(p)
    assert np.allclose(occ.d_mu.sum(axis=(1, 2)), 1.0, atol=1e-10)
    assert np.allclose(occ.d_pi.sum(axis=(1, 2)), 1.0, atol=1e-10)
    assert np.allclose((occ.d_mu * occ.ratio).sum(axis=(1, 2)), 1.0, atol=1e-10)


def test_target_occupancy_matches_target_enumeration():
    p = random_ergodic(9, 3, 2, 4, 1.0, 0.6, initial="random")
    swapped = EvaluationProblem(p.mdp, p.target, p.behavior)
    batch = enumerate_paths(swapped)
    occ = occupancies(p)
    for t in range(p.horizon):
        emp = np.zeros_like(occ.d_pi[t])
        np.add.at(emp, (batch.states[:, t], batch.actions[:, t]), batch.prob)
        assert np.allclose(emp, occ.d_pi[t], atol=1e-12)


def test_support_gap_rejected():
    P = np.zeros((3, 2, 3))
    P[0, 0, 1] = P[0, 1, 2] = 1.0
    P[1, :, 1] = P[2, :, 2] = 1.0
    mu = [[1, 0], [0.5, 0.5], [0.5, 0.5]]
    # target differs from behavior only in state 2, which behavior never reaches
    ok = make_problem(P, np.zeros((3, 2)), [1, 0, 0], mu, [[1, 0], [0.5, 0.5], [0, 1]], 2)
    assert occupancies(ok).ratio[1, 2].sum() == 0.0
    # target reaches state 2 by an action behavior never takes
    bad = make_problem(P, np.zeros((3, 2)), [1, 0, 0], mu, [[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]], 2)
    with pytest.raises(InvalidProblemError):
        occupancies(bad)


def test_stationary_single_state():
    mdp = TabularMdp.stationary(np.ones((1, 3, 1)), np.zeros((1, 3)), [1.0], 1)
    d = stationary_distribution(mdp, np.array([[0.2, 0.3, 0.5]]))
    assert np.allclose(d, [[0.2, 0.3, 0.5]])


def test_stationary_doubly_stochastic_is_uniform():
    n = 4
    shift = np.roll(np.eye(n), 1, axis=1)
    P = np.stack([np.eye(n) * 0.5 + shift * 0.5, shift], axis=1)
    p1 = np.zeros(n)
    p1[0] = 1
    mdp = TabularMdp.stationary(P, np.zeros((n, 2)), p1, 1)
    d = stationary_distribution(mdp, np.full((n, 2), 0.5))
    assert np.allclose(d.sum(axis=1), 0.25, atol=1e-9)


def test_stationary_matches_long_forward_recursion():
    p = random_ergodic(7, 5, 2, 1, 1.0, 0.2)
    d = stationary_distribution(p.mdp, p.behavior.probs)
    late = occupancies(p.with_horizon(10_000)).d_mu[-1]
    assert np.allclose(d, late, atol=1e-8)


def test_stationary_periodic_chain_fails():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    mdp = TabularMdp.stationary(P, np.zeros((2, 1)), [1, 0], 1)
    with pytest.raises(ConvergenceError):
        stationary_distribution(mdp, np.ones((2, 1)), max_iter=1000)


def test_kl_rate_examples(on_policy):
    assert kl_rate(on_policy) == 0.0
    p = single_state([0.6, 0.4], 3)
    assert kl_rate(p) == pytest.approx(0.5 * math.log(25 / 24), abs=1e-15)
    det = single_state([1.0, 0.0], 3)
    assert kl_rate(det) == math.inf


def test_diagnostics_examples(on_policy):
    d = diagnostics(on_policy)
    assert (d.U_rho, d.M_rho_sq, d.c) == (1.0, 1.0, 0.0)
    assert d.U_s == pytest.approx(1.0, abs=1e-12)
    d = diagnostics(single_state([0.6, 0.4], 3))
    assert d.U_rho == pytest.approx(1.2) and d.M_rho_sq == pytest.approx(1.04)
    d = diagnostics(two_lane(6))
    assert d.U_rho == 2.0 and d.U_rho_at == (0, 0)


def test_diagnostics_reports_infinite_ratio():
    p = make_problem(np.ones((1, 2, 1)), [[1, 1]], [1.0], [[1.0, 0.0]], [[0.5, 0.5]], 2)
    d = diagnostics(p)
    assert d.U_rho == math.inf and d.U_rho_at == (0, 1)


def test_diagnostics_ergodic_instance():
    d = diagnostics(random_ergodic(7, 5, 2, 10, 1.0, 0.2))
    assert 0 < d.c < math.inf and math.isfinite(d.U_rho) and d.U_rho >= 1 and d.M_rho_sq >= 1


def test_conditional_weight_check_examples():
    assert conditional_weight_check(counterexample_mdp(1), 2) <= 1e-12
    p = random_ergodic(4, 4, 2, 3, 1.0, 0.7, initial="random")
    assert conditional_weight_check(p, 1) <= 1e-15


def test_conditional_weight_check_population():
    for i in range(50):
        p = random_ergodic(1000 + i, 4, 2, 5, 1.0, 0.5, initial="random")
        for t in range(1, 6):
            assert conditional_weight_check(p, t) <= 1e-10


def test_occupancy_csv_rows():
    rows = list(occupancies(counterexample_mdp(1)).rows())
    assert len(rows) == 2 * 3 * 2 and rows[0] == (1, 0, 0, 0.5, 0.6, 1.2)
