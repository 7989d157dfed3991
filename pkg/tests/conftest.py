import numpy as np
import pytest

from softnpg.mdp import FiniteMdp, random_mdp

CRITERIA_LINES: list[str] = []


def single_state_mdp(rewards, gamma=0.9):
    r = np.atleast_2d(np.asarray(rewards, dtype=float))
    return FiniteMdp(np.ones((1, r.shape[1], 1)), r, gamma)


def truncated_visitation(mdp, pi, mu, tol=1e-15):
    """(1 - gamma) sum_t gamma^t mu^T P_pi^t, summed until gamma^t < tol."""
    p_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    d = np.zeros(mdp.n_states)
    row = np.asarray(mu, dtype=float)
    weight = 1.0
    while weight > tol:
        d += (1 - mdp.gamma) * weight * row
        row = row @ p_pi
        weight *= mdp.gamma
    return d


def truncated_value(mdp, pi, reward, tol=1e-16):
    """sum_t gamma^t P_pi^t r_pi, summed until gamma^t < tol."""
    p_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    r_pi = np.sum(pi * reward, axis=1)
    v = np.zeros(mdp.n_states)
    term = r_pi.copy()
    weight = 1.0
    while weight > tol:
        v += weight * term
        term = p_pi @ term
        weight *= mdp.gamma
    return v


@pytest.fixture
def mdp_5x3():
    return random_mdp(5, 3, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)
