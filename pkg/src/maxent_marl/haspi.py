"""Sequential soft policy iteration with per-agent Boltzmann updates.

One outer iteration evaluates the soft Q-table of the current joint
policy once, draws an agent permutation, and updates agents one at a
time. Agent i_m's new row at each state is the closed-form solution of
its local KL minimization,

    pi_new^{i_m}(a|s) proportional to
        exp( E_{a^{i_1..i_{m-1}} ~ pi_new}[ Q^{i_1..i_m}(s, ., a) ] / alpha ),

where the conditional table Q^{i_1..i_m} is taken under the *old* joint
policy and the expectation runs over the already-updated agents in this
sweep. Each sweep is guaranteed not to decrease the entropy-regularized
return, and the iteration's limit points are quantal response equilibria
(checked against the independent oracle in :mod:`maxent_marl.qre_oracle`).

The simultaneous variant updates every agent against the others' old
policies instead of conditioning on the updated prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .game_core import (
    AgentPolicy,
    CooperativeMarkovGame,
    JointPolicy,
    Permutation,
    sup_policy_distance,
)
from .qre_oracle import boltzmann_rows, qre_residual
from .soft_dp import (
    SoftQTable,
    evaluate_policy_exact,
    evaluate_policy_iterative,
    multiagent_soft_q,
    soft_value,
)

__all__ = [
    "PermutationRule",
    "fixed_order",
    "random_order",
    "cyclic_order",
    "HaspiOptions",
    "IterationRecord",
    "SolveTrace",
    "expected_conditional_q",
    "boltzmann_local_update",
    "haspi_step",
    "masac_step",
    "haspi_solve",
    "masac_solve",
]


@dataclass(frozen=True)
class PermutationRule:
    """How the per-iteration agent ordering is chosen.

    kind "fixed" replays one ordering, "random" draws a fresh uniform
    permutation from a seeded generator each iteration, "cyclic" rotates
    the identity ordering by one position per iteration.
    """

    kind: str
    ordering: Optional[tuple[int, ...]] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "random", "cyclic"):
            raise ValueError(f"unknown permutation rule {self.kind!r}")
        if self.kind == "fixed" and self.ordering is None:
            raise ValueError("fixed permutation rule needs an ordering")
        if self.ordering is not None:
            object.__setattr__(self, "ordering", tuple(int(i) for i in self.ordering))

    def sampler(self, n_agents: int) -> Callable[[int], Permutation]:
        if self.kind == "fixed":
            perm = Permutation(self.ordering)
            if len(perm) != n_agents:
                raise ValueError(
                    f"fixed ordering {self.ordering} does not cover {n_agents} agents"
                )
            return lambda k: perm
        if self.kind == "cyclic":
            base = np.arange(n_agents)
            return lambda k: Permutation(tuple(np.roll(base, -k)))
        rng = np.random.default_rng(self.seed)
        return lambda k: Permutation(tuple(rng.permutation(n_agents)))


def fixed_order(ordering: Sequence[int]) -> PermutationRule:
    return PermutationRule("fixed", ordering=tuple(ordering))


def random_order(seed: int) -> PermutationRule:
    return PermutationRule("random", seed=seed)


def cyclic_order() -> PermutationRule:
    return PermutationRule("cyclic")


@dataclass(frozen=True)
class HaspiOptions:
    """Knobs for the outer solve loop.

    alpha must be strictly positive: the zero-temperature greedy limit is
    ill-defined under ties, so cold runs use small positive temperatures
    instead. ``eval_method`` picks the exact linear solve or fixed-point
    iteration at tolerance ``tol_eval`` for the evaluation half-step.
    """

    alpha: float
    tol_policy: float = 1e-10
    tol_eval: float = 1e-12
    eval_method: str = "exact"
    max_outer_iters: int = 10_000
    permutation_rule: PermutationRule = field(default_factory=lambda: random_order(0))
    record_trace: bool = True

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError(
                f"temperature must be strictly positive, got {self.alpha}"
            )
        if self.tol_policy <= 0 or self.tol_eval <= 0:
            raise ValueError("tolerances must be positive")
        if self.eval_method not in ("exact", "iterative"):
            raise ValueError(f"unknown eval_method {self.eval_method!r}")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")


@dataclass(frozen=True, eq=False)
class IterationRecord:
    """State of the solve after one outer iteration.

    Record 0 describes the initial policy (no permutation, no change).
    ``values`` is the per-state soft value vector and ``policies`` the
    per-agent row tables of the policy this record describes.
    """

    iteration: int
    permutation: Optional[tuple[int, ...]]
    policy_change: float
    maxent_return: float
    values: np.ndarray
    qre_residual: float
    policies: tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class SolveTrace:
    """Per-iteration records plus the final status."""

    iterations: list[IterationRecord]
    status: str  # "converged" | "max_iters"

    @property
    def returns(self) -> list[float]:
        return [rec.maxent_return for rec in self.iterations]


def expected_conditional_q(
    game: CooperativeMarkovGame,
    q_old: SoftQTable,
    joint_policy_old: JointPolicy,
    updated_prefix: Sequence[AgentPolicy],
    agent: int,
    alpha: float,
) -> np.ndarray:
    """Per-state update coefficients for one agent, shape (|S|, |A^agent|).

    Conditions the old policy's table on (updated agents..., agent), then
    averages the updated agents' axes under their new rows. Agents outside
    the prefix stay at their old policies through the conditional table.
    """
    prefix_ids = tuple(p.agent_id for p in updated_prefix)
    if agent in prefix_ids:
        raise ValueError(f"agent {agent} already appears in the updated prefix")
    maq = multiagent_soft_q(game, joint_policy_old, q_old, prefix_ids + (agent,), alpha)
    values = maq.values
    for policy in updated_prefix:
        values = np.einsum("sa...,sa->s...", values, policy.table)
    return values


def boltzmann_local_update(
    game: CooperativeMarkovGame,
    q_old: SoftQTable,
    joint_policy_old: JointPolicy,
    updated_prefix: Sequence[AgentPolicy],
    agent: int,
    alpha: float,
) -> AgentPolicy:
    """Closed-form KL-minimizing row update for one agent.

    Returns the Boltzmann distribution over the prefix-averaged
    conditional coefficients at temperature alpha. Rows are strictly
    positive and normalized; constant-in-action terms (the complement
    agents' entropy bonus) cancel in the normalization. The caller is
    responsible for ``q_old`` being the evaluated table of
    ``joint_policy_old``.
    """
    if alpha <= 0:
        raise ValueError(f"temperature must be positive, got {alpha}")
    coef = expected_conditional_q(
        game, q_old, joint_policy_old, updated_prefix, agent, alpha
    )
    rows = boltzmann_rows(coef, alpha)
    if not np.isfinite(rows).all():  # unreachable with finite Q
        raise RuntimeError("Boltzmann update produced a non-finite row")
    return AgentPolicy(agent, rows)


def _sequential_sweep(
    game: CooperativeMarkovGame,
    joint_policy: JointPolicy,
    q: SoftQTable,
    alpha: float,
    permutation: Permutation,
) -> JointPolicy:
    agents = list(joint_policy.agents)
    updated: list[AgentPolicy] = []
    for agent in permutation.order:
        policy = boltzmann_local_update(game, q, joint_policy, updated, agent, alpha)
        updated.append(policy)
        agents[agent] = policy
    return JointPolicy(tuple(agents))


def _simultaneous_sweep(
    game: CooperativeMarkovGame,
    joint_policy: JointPolicy,
    q: SoftQTable,
    alpha: float,
) -> JointPolicy:
    agents = tuple(
        boltzmann_local_update(game, q, joint_policy, [], i, alpha)
        for i in range(game.n_agents)
    )
    return JointPolicy(agents)


def _evaluate(
    game: CooperativeMarkovGame, joint_policy: JointPolicy, options: HaspiOptions
) -> SoftQTable:
    if options.eval_method == "iterative":
        q, _ = evaluate_policy_iterative(
            game, joint_policy, options.alpha, tol=options.tol_eval
        )
        return q
    return evaluate_policy_exact(game, joint_policy, options.alpha)


def haspi_step(
    game: CooperativeMarkovGame,
    joint_policy: JointPolicy,
    alpha: float,
    permutation: Permutation,
    tol_eval: Optional[float] = None,
) -> JointPolicy:
    """One evaluation plus one sequential improvement sweep.

    Evaluates the soft Q-table of the incoming policy once (exactly, or
    iteratively at ``tol_eval`` when given), then updates every agent
    along the permutation, each conditioning on the prefix updated so far.
    """
    if tol_eval is None:
        q = evaluate_policy_exact(game, joint_policy, alpha)
    else:
        q, _ = evaluate_policy_iterative(game, joint_policy, alpha, tol=tol_eval)
    return _sequential_sweep(game, joint_policy, q, alpha, permutation)


def masac_step(
    game: CooperativeMarkovGame,
    joint_policy: JointPolicy,
    alpha: float,
    tol_eval: Optional[float] = None,
) -> JointPolicy:
    """Simultaneous variant: every agent updates against old teammates."""
    if tol_eval is None:
        q = evaluate_policy_exact(game, joint_policy, alpha)
    else:
        q, _ = evaluate_policy_iterative(game, joint_policy, alpha, tol=tol_eval)
    return _simultaneous_sweep(game, joint_policy, q, alpha)


SweepFn = Callable[
    [CooperativeMarkovGame, JointPolicy, SoftQTable, float, Permutation], JointPolicy
]


def _policy_iteration_loop(
    game: CooperativeMarkovGame,
    initial_joint_policy: JointPolicy,
    options: HaspiOptions,
    sweep: SweepFn,
    uses_permutation: bool = True,
) -> tuple[JointPolicy, SoftQTable, "SolveTrace"]:
    """Shared outer loop: evaluate, record, sweep, check policy movement.

    Shared between the sequential, simultaneous and generalized (drift)
    solvers so that trivially-configured variants are iterate-for-iterate
    identical under the same permutation seed.
    """
    jp = initial_joint_policy
    sampler = options.permutation_rule.sampler(game.n_agents)
    records: list[IterationRecord] = []

    def snapshot(k: int, perm: Optional[Permutation], change: float, q: SoftQTable) -> None:
        if not options.record_trace:
            return
        v = soft_value(game, jp, q, options.alpha)
        records.append(
            IterationRecord(
                iteration=k,
                permutation=None if perm is None else perm.order,
                policy_change=change,
                maxent_return=float(game.initial_dist @ v.values),
                values=v.values.copy(),
                qre_residual=qre_residual(game, jp, options.alpha, q=q),
                policies=tuple(a.table.copy() for a in jp.agents),
            )
        )

    q = _evaluate(game, jp, options)
    snapshot(0, None, 0.0, q)
    status = "max_iters"
    for k in range(1, options.max_outer_iters + 1):
        perm = sampler(k - 1) if uses_permutation else None
        jp_new = sweep(game, jp, q, options.alpha, perm)
        change = sup_policy_distance(jp_new, jp)
        jp = jp_new
        q = _evaluate(game, jp, options)
        snapshot(k, perm, change, q)
        if change < options.tol_policy:
            status = "converged"
            break
    return jp, q, SolveTrace(iterations=records, status=status)


def haspi_solve(
    game: CooperativeMarkovGame,
    initial_joint_policy: JointPolicy,
    options: HaspiOptions,
) -> tuple[JointPolicy, SoftQTable, SolveTrace]:
    """Alternate evaluation and sequential sweeps until the policy stops moving.

    Terminates when the sup-norm policy change of a sweep drops below
    ``tol_policy`` (status "converged") or after ``max_outer_iters``
    sweeps (status "max_iters"; the last iterate is still returned). The
    trace records the entropy-regularized return, per-state values, QRE
    residual, permutation and policy snapshot of every iterate.
    """
    return _policy_iteration_loop(game, initial_joint_policy, options, _haspi_sweep)


def _haspi_sweep(game, jp, q, alpha, perm):
    return _sequential_sweep(game, jp, q, alpha, perm)


def masac_solve(
    game: CooperativeMarkovGame,
    initial_joint_policy: JointPolicy,
    options: HaspiOptions,
) -> tuple[JointPolicy, SoftQTable, SolveTrace]:
    """Outer loop around the simultaneous sweep; no permutation involved."""
    return _policy_iteration_loop(
        game, initial_joint_policy, options, _masac_sweep, uses_permutation=False
    )


def _masac_sweep(game, jp, q, alpha, perm):
    return _simultaneous_sweep(game, jp, q, alpha)
