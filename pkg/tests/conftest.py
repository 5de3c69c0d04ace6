"""Shared fixtures: the reference matrix game and the seeded game suite."""

import numpy as np
import pytest

from maxent_marl import (
    joint_policy_from_rows,
    new_matrix_game,
    random_game,
    uniform_joint_policy,
)

MATRIX = np.array([[5.0, -20.0, -20.0], [-20.0, 10.0, -20.0], [-20.0, -20.0, 20.0]])
START_ROW = (0.6, 0.2, 0.2)


@pytest.fixture
def matrix_game():
    return new_matrix_game(MATRIX)


@pytest.fixture
def start_policy():
    row = np.array([START_ROW])
    return joint_policy_from_rows([row.copy(), row.copy()])


def suite_params(n_games=100):
    """Deterministic enumeration of the seeded random-game suite.

    2-3 agents, 1-5 states, 2-4 actions per agent, gamma in {0.5, 0.9},
    temperature in {0.1, 1, 5}, cycling so every combination appears.
    """
    gammas = (0.5, 0.9)
    alphas = (0.1, 1.0, 5.0)
    for k in range(n_games):
        n_agents = 2 + k % 2
        n_states = 1 + k % 5
        counts = tuple(2 + (k + j) % 3 for j in range(n_agents))
        yield k, n_agents, n_states, counts, gammas[k % 2], alphas[k % 3]


def suite_game(k, n_agents, n_states, counts, gamma):
    return random_game(1000 + k, n_agents, n_states, counts, -1.0, 1.0, gamma)


def random_start(game, k):
    """Seeded interior starting policy for suite game k."""
    rng = np.random.default_rng(5000 + k)
    return joint_policy_from_rows(
        [rng.dirichlet(np.ones(c), size=game.n_states) for c in game.action_counts]
    )


def uniform_start(game):
    return uniform_joint_policy(game)
