"""Soft dynamic programming for entropy-regularized joint policies.

Everything here operates on exact tables. The central objects are

    V(s)      = E_{a~pi}[Q(s, a)] + alpha * sum_i H(pi^i(.|s))
    (G Q)(s,a) = r(s, a) + gamma * E_{s'~P}[V(s')]

where H is Shannon entropy in nats. The entropy bonus enters through V,
so Q(s, a) excludes the entropy at (s, a) itself and accrues it from the
next state onward. Repeated application of G from any bounded start
contracts to the unique soft Q-table of the policy (gamma < 1); the same
fixed point also satisfies a linear system in V, which
:func:`evaluate_policy_exact` solves directly.

Ordered-subset conditionals Q^{i_1..i_m}(s, a^{i_1..i_m}) average the
joint table over the remaining agents' policies and add their entropy;
the full-subset case is the joint table reindexed, the empty-subset case
is V. Differences of two such tables give the soft advantage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .game_core import (
    CooperativeMarkovGame,
    JointPolicy,
    joint_action_table,
    policy_entropy_rows,
)

__all__ = [
    "SoftQTable",
    "SoftValueTable",
    "MultiAgentSoftQ",
    "EvaluationNotConverged",
    "zero_soft_q",
    "soft_bellman_backup",
    "soft_value",
    "evaluate_policy_iterative",
    "evaluate_policy_exact",
    "multiagent_soft_q",
    "multiagent_soft_advantage",
    "maxent_return",
]

_AXIS_LETTERS = "abcdefghijk"

_EXACT_RESIDUAL_TOL = 1e-9


class EvaluationNotConverged(RuntimeError):
    """Iterative evaluation hit its iteration cap before reaching tol."""

    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"evaluation did not converge in {iterations} iterations "
            f"(last residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True, eq=False)
class SoftQTable:
    """Entropy-regularized action values, shape (|S|, prod|A^i|)."""

    alpha: float
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 2:
            raise ValueError(f"soft Q table must be 2-d, got shape {values.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass(frozen=True, eq=False)
class SoftValueTable:
    """Entropy-regularized state values, shape (|S|,)."""

    alpha: float
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 1:
            raise ValueError(f"value table must be 1-d, got shape {values.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass(frozen=True, eq=False)
class MultiAgentSoftQ:
    """Ordered-subset conditional soft Q.

    ``values`` has shape (|S|, |A^{i_1}|, ..., |A^{i_m}|) with axes in
    ``prefix`` order. An empty prefix leaves shape (|S|,) and equals the
    soft value table; the full prefix equals the joint table reindexed.
    """

    alpha: float
    prefix: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "prefix", tuple(int(i) for i in self.prefix))
        object.__setattr__(self, "alpha", float(self.alpha))


def zero_soft_q(game: CooperativeMarkovGame, alpha: float) -> SoftQTable:
    return SoftQTable(alpha, np.zeros((game.n_states, game.n_joint_actions)))


def _check_shapes(game: CooperativeMarkovGame, q: SoftQTable) -> None:
    expected = (game.n_states, game.n_joint_actions)
    if q.values.shape != expected:
        raise ValueError(f"soft Q shape {q.values.shape} does not match game {expected}")


def _check_policy(game: CooperativeMarkovGame, joint_policy: JointPolicy) -> None:
    if joint_policy.n_agents != game.n_agents:
        raise ValueError(
            f"policy has {joint_policy.n_agents} agents, game has {game.n_agents}"
        )
    if joint_policy.n_states != game.n_states:
        raise ValueError(
            f"policy has {joint_policy.n_states} states, game has {game.n_states}"
        )
    for agent, count in zip(joint_policy.agents, game.action_counts):
        if agent.n_actions != count:
            raise ValueError(
                f"agent {agent.agent_id} has {agent.n_actions} actions, game expects {count}"
            )


def _entropy_bonus(joint_policy: JointPolicy) -> np.ndarray:
    """sum_i H(pi^i(.|s)) for every state, shape (|S|,)."""
    total = np.zeros(joint_policy.n_states)
    for agent in joint_policy.agents:
        total += policy_entropy_rows(agent)
    return total


def soft_value(
    game: CooperativeMarkovGame,
    joint_policy: JointPolicy,
    q: SoftQTable,
    alpha: float,
) -> SoftValueTable:
    """V(s) = E_{a~pi}[Q(s,a)] + alpha * sum_i H(pi^i(.|s))."""
    _check_shapes(game, q)
    _check_policy(game, joint_policy)
    joint = joint_action_table(joint_policy)
    values = np.einsum("sa,sa->s", joint, q.values) + alpha * _entropy_bonus(joint_policy)
    return SoftValueTable(alpha, values)


def soft_bellman_backup(
    game: CooperativeMarkovGame,
    joint_policy: JointPolicy,
    q: SoftQTable,
    alpha: float,
) -> SoftQTable:
    """One application of the entropy-regularized Bellman operator.

    Q'(s, a) = r(s, a) + gamma * sum_{s'} P(s'|s,a) V(s') with V computed
    from the given table and policy.
    """
    v = soft_value(game, joint_policy, q, alpha)
    values = game.reward + game.gamma * (game.transition @ v.values)
    return SoftQTable(alpha, values)


def evaluate_policy_iterative(
    game: CooperativeMarkovGame,
    joint_policy: JointPolicy,
    alpha: float,
    tol: float = 1e-10,
    max_iters: int = 100_000,
) -> tuple[SoftQTable, int]:
    """Fixed-point iteration of the backup operator from Q = 0.

    Stops once the sup-norm change of successive tables drops below a
    threshold scaled by the contraction factor, min(tol, tol*(1-g)/g),
    which guarantees the returned table is within ``tol`` of the fixed
    point (a raw change below c leaves at most c*g/(1-g) to go). A single
    backup is already exact for gamma = 0. Raises
    :class:`EvaluationNotConverged` if ``max_iters`` is exhausted first.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if game.gamma >= 1.0:
        raise ValueError("iterative evaluation requires gamma < 1")
    q = zero_soft_q(game, alpha)
    if game.gamma == 0.0:
        return soft_bellman_backup(game, joint_policy, q, alpha), 1
    threshold = tol * min(1.0, (1.0 - game.gamma) / game.gamma)
    residual = np.inf
    for k in range(1, max_iters + 1):
        q_next = soft_bellman_backup(game, joint_policy, q, alpha)
        residual = float(np.abs(q_next.values - q.values).max())
        q = q_next
        if residual < threshold:
            return q, k
    raise EvaluationNotConverged(max_iters, residual)


def evaluate_policy_exact(
    game: CooperativeMarkovGame,
    joint_policy: JointPolicy,
    alpha: float,
) -> SoftQTable:
    """Soft Q of a policy by direct linear solve.

    The value vector satisfies (I - gamma M) V = rbar + alpha * h with
    M(s, s') = sum_a pi(a|s) P(s'|s,a), rbar the policy-averaged reward
    and h the per-state entropy bonus; Q then follows from one backup.
    The system is solved by dense LU factorization with partial pivoting
    and the result is checked against the backup operator to 1e-9.
    """
    if game.gamma >= 1.0:
        raise ValueError("exact evaluation requires gamma < 1")
    _check_policy(game, joint_policy)
    joint = joint_action_table(joint_policy)
    rbar = np.einsum("sa,sa->s", joint, game.reward)
    h = _entropy_bonus(joint_policy)
    m = np.einsum("sa,sat->st", joint, game.transition)
    lhs = np.eye(game.n_states) - game.gamma * m
    try:
        v = np.linalg.solve(lhs, rbar + alpha * h)
    except np.linalg.LinAlgError as exc:  # unreachable for gamma < 1
        raise RuntimeError(f"evaluation system is singular: {exc}") from exc
    q = SoftQTable(alpha, game.reward + game.gamma * (game.transition @ v))
    residual = float(
        np.abs(soft_bellman_backup(game, joint_policy, q, alpha).values - q.values).max()
    )
    if residual > _EXACT_RESIDUAL_TOL:
        raise RuntimeError(
            f"exact evaluation residual {residual:.3e} exceeds {_EXACT_RESIDUAL_TOL}"
        )
    return q


def multiagent_soft_q(
    game: CooperativeMarkovGame,
    joint_policy: JointPolicy,
    q: SoftQTable,
    prefix: Sequence[int],
    alpha: float,
) -> MultiAgentSoftQ:
    """Condition the joint table on an ordered agent subset.

    Q^{i_1..i_m}(s, a^{i_1..i_m}) =
        E_{a^rest ~ pi}[Q(s, a)] + alpha * sum_{i in rest} H(pi^i(.|s)).

    The expectation runs over the complement agents under the given
    policy; their entropy enters as a state-dependent constant.
    """
    _check_shapes(game, q)
    _check_policy(game, joint_policy)
    prefix = tuple(int(i) for i in prefix)
    if len(set(prefix)) != len(prefix):
        raise ValueError(f"prefix {prefix} contains a duplicate agent")
    if any(i < 0 or i >= game.n_agents for i in prefix):
        raise ValueError(f"prefix {prefix} is out of range for {game.n_agents} agents")
    if game.n_agents > len(_AXIS_LETTERS):
        raise ValueError("dense conditionals support at most 11 agents")
    complement = [i for i in range(game.n_agents) if i not in prefix]
    tensor = q.values.reshape(game.n_states, *game.action_counts)
    subscripts = ["s" + _AXIS_LETTERS[: game.n_agents]]
    operands: list[np.ndarray] = [tensor]
    for i in complement:
        subscripts.append("s" + _AXIS_LETTERS[i])
        operands.append(joint_policy.agents[i].table)
    out = "s" + "".join(_AXIS_LETTERS[i] for i in prefix)
    values = np.einsum(",".join(subscripts) + "->" + out, *operands)
    if complement:
        bonus = np.zeros(game.n_states)
        for i in complement:
            bonus += policy_entropy_rows(joint_policy.agents[i])
        values = values + alpha * bonus.reshape((-1,) + (1,) * len(prefix))
    return MultiAgentSoftQ(alpha, prefix, values)


def multiagent_soft_advantage(
    game: CooperativeMarkovGame,
    joint_policy: JointPolicy,
    q: SoftQTable,
    cond_subset: Sequence[int],
    subset: Sequence[int],
    alpha: float,
) -> np.ndarray:
    """Soft advantage of ``subset`` acting after ``cond_subset``.

    A^{subset}(s, a^{cond}, a^{subset}) = Q^{cond+subset} - Q^{cond},
    returned with shape (|S|, |A^{cond...}|..., |A^{subset...}|...).
    """
    cond = tuple(int(i) for i in cond_subset)
    sub = tuple(int(i) for i in subset)
    if set(cond) & set(sub):
        raise ValueError(f"subsets {cond} and {sub} overlap")
    q_both = multiagent_soft_q(game, joint_policy, q, cond + sub, alpha)
    q_cond = multiagent_soft_q(game, joint_policy, q, cond, alpha)
    expand = q_cond.values.reshape(q_cond.values.shape + (1,) * len(sub))
    return q_both.values - expand


def maxent_return(
    game: CooperativeMarkovGame,
    joint_policy: JointPolicy,
    alpha: float,
) -> float:
    """Entropy-regularized return J = sum_s d(s) V(s), V from the exact solve."""
    q = evaluate_policy_exact(game, joint_policy, alpha)
    v = soft_value(game, joint_policy, q, alpha)
    return float(game.initial_dist @ v.values)
