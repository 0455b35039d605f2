"""Exact dynamic-programming ground truth for tabular MDPs."""

from typing import NamedTuple

import numpy as np

from ._validation import ValidationError, check_policy_table

EXACT_SOLVE_MAX_STATES = 200


class NonConvergenceError(RuntimeError):
    """Policy evaluation has no finite solution (e.g. discount 1 without absorption)."""


class ExactEvaluation(NamedTuple):
    """Exact quantities for one policy.

    ``occupancy`` is the expected discounted number of visits per state
    (``d / (1 - discount)`` for discounted MDPs; the undiscounted episode
    occupancy of non-terminal states when the discount is 1).  ``d`` is the
    normalized visitation distribution.
    """

    v: np.ndarray
    q: np.ndarray
    d: np.ndarray
    J: float
    occupancy: np.ndarray
    policy: np.ndarray


class AliasedValues(NamedTuple):
    v1: float
    v2: float
    v3: float
    q_up: float
    q_down: float
    v_phi: float


class TrpoBound(NamedTuple):
    bound: float
    actual_difference: float
    alpha: float
    eps_max: float
    surrogate: float

    @property
    def satisfied(self):
        return self.actual_difference >= self.bound - 1e-8


def _state_policy(mdp, policy, per_state):
    if per_state:
        return check_policy_table(policy, mdp.num_states, mdp.num_actions)
    return mdp.state_policy(policy)


def _solve(mdp, M, rhs, transpose=False):
    """Solve ``(I - M) x = rhs`` (or its transpose) exactly or iteratively."""
    n = M.shape[0]
    if n == 0:
        return np.zeros(0)
    A = np.eye(n) - (M.T if transpose else M)
    if n <= EXACT_SOLVE_MAX_STATES:
        if np.linalg.cond(A) > 1e12:
            raise NonConvergenceError(
                f"{mdp.name}: evaluation system is singular; discount "
                f"{mdp.discount} with no reachable absorption"
            )
        return np.linalg.solve(A, rhs)
    x = np.zeros(n)
    Mt = M.T if transpose else M
    for _ in range(1_000_000):
        x_new = rhs + Mt @ x
        if np.max(np.abs(x_new - x)) < 1e-12:
            return x_new
        x = x_new
    raise NonConvergenceError(f"{mdp.name}: iterative evaluation did not converge")


def evaluate(mdp, policy, per_state=False):
    """Exact ``v_pi``, ``q_pi``, visitation ``d_pi`` and objective ``J(pi)``.

    Args:
        mdp: a :class:`~muesli_lab.env.TabularMDP`.
        policy: per-observation table ``(num_obs, A)``, or per-state
            ``(num_states, A)`` when ``per_state`` is true.
    """
    pi = _state_policy(mdp, policy, per_state)
    gamma = mdp.discount
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    r = mdp.expected_reward()
    r_pi = np.sum(pi * r, axis=1)

    live = ~mdp.terminal if gamma >= 1.0 else np.ones(mdp.num_states, dtype=bool)
    idx = np.flatnonzero(live)
    M = gamma * P_pi[np.ix_(idx, idx)]
    v = np.zeros(mdp.num_states)
    v[idx] = _solve(mdp, M, r_pi[idx])
    q = r + gamma * np.einsum("sat,t->sa", mdp.transition, v)

    occupancy = np.zeros(mdp.num_states)
    occupancy[idx] = _solve(mdp, M, mdp.initial_dist[idx], transpose=True)
    if gamma < 1.0:
        d = (1.0 - gamma) * occupancy
    else:
        d = occupancy / occupancy.sum()
    J = float(mdp.initial_dist @ v)
    return ExactEvaluation(v, q, d, J, occupancy, pi)


def observation_values(mdp, evaluation):
    """Aggregate ``v`` and ``q`` per observation, weighting states by ``P(s | obs)``.

    ``P(s | obs)`` is proportional to the visitation ``d(s)``; observations
    that are never visited get weight spread uniformly over their states.
    """
    O = mdp.num_obs
    v_obs = np.zeros(O)
    q_obs = np.zeros((O, mdp.num_actions))
    for o in range(O):
        members = np.flatnonzero(mdp.obs_map == o)
        w = evaluation.d[members]
        w = w / w.sum() if w.sum() > 0 else np.full(members.size, 1.0 / members.size)
        v_obs[o] = w @ evaluation.v[members]
        q_obs[o] = w @ evaluation.q[members]
    return v_obs, q_obs


def aliased_closed_form(p):
    """Closed-form values of the aliased MDP when ``pi(up) = p`` everywhere."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"p must lie in [0, 1], got {p}")
    return AliasedValues(
        v1=-4 * p * p + 5 * p - 1,
        v2=-2 * p + 1,
        v3=2 * p - 1,
        q_up=-2 * p + 1.5,
        q_down=2 * p - 1,
        v_phi=-4 * p * p + 4.5 * p - 1,
    )


def greedy_improve(q):
    """Deterministic greedy policy; ties go to the lowest action index."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    pi = np.zeros_like(q)
    pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return pi


def performance_difference(mdp, pi_new, pi_prior, per_state=False):
    """``J(pi_new) - J(pi_prior)`` via the new policy's occupancy and prior advantages."""
    new = evaluate(mdp, pi_new, per_state)
    prior = evaluate(mdp, pi_prior, per_state)
    adv = prior.q - prior.v[:, None]
    return float(new.occupancy @ np.sum(new.policy * adv, axis=1))


def total_variation_per_state(p, q):
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def trpo_lower_bound(mdp, pi_new, pi_prior, per_state=False, check=True):
    """Lower bound on ``J(pi_new) - J(pi_prior)`` from the max total variation.

    Raises:
        ValidationError: for discount 1 (the bound needs ``discount < 1``).
        AssertionError: with ``check`` set, if the actual difference violates
            the bound by more than 1e-8.
    """
    gamma = mdp.discount
    if gamma >= 1.0:
        raise ValidationError("trpo_lower_bound requires discount < 1")
    new = evaluate(mdp, pi_new, per_state)
    prior = evaluate(mdp, pi_prior, per_state)
    adv = prior.q - prior.v[:, None]
    alpha = float(np.max(total_variation_per_state(new.policy, prior.policy)))
    eps_max = float(np.max(np.abs(adv)))
    surrogate = float(prior.occupancy @ np.sum(new.policy * adv, axis=1))
    bound = surrogate - 4 * alpha**2 * gamma * eps_max / (1 - gamma) ** 2
    result = TrpoBound(bound, new.J - prior.J, alpha, eps_max, surrogate)
    if check and not result.satisfied:
        raise AssertionError(f"TRPO bound violated: {result}")
    return result
