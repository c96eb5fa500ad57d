import numpy as np
import pytest

from ope_lab.mdp import EvaluationProblem, PolicyTable, TabularMdp

_CRITERIA: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _CRITERIA.append((props["criterion"], "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _CRITERIA:
        terminalreporter.write_line(f"{outcome}  {name}")


def make_problem(P, R, p1, mu, pi, T, gamma=1.0, absorbing=None) -> EvaluationProblem:
    mdp = TabularMdp.stationary(np.asarray(P, float), np.asarray(R, float), p1, T, gamma, absorbing)
    return EvaluationProblem(mdp, PolicyTable(np.asarray(mu, float)), PolicyTable(np.asarray(pi, float)))


def single_state(pi, T, reward=(1.0, 1.0), gamma=1.0) -> EvaluationProblem:
    A = len(pi)
    return make_problem(np.ones((1, A, 1)), [reward], [1.0], [[1.0 / A] * A], [pi], T, gamma)


@pytest.fixture
def on_policy():
    """Random problem whose target equals the behavior policy."""
    from ope_lab.scenarios import random_ergodic

    return random_ergodic(5, 3, 2, 4, 1.0, 0.0)
