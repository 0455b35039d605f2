import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import bellman_iteration
from muesli_lab._validation import ValidationError
from muesli_lab.env import aliased_mdp, chain_mdp, random_mdp, sample_episode, TabularMDP
from muesli_lab.oracle import (NonConvergenceError, aliased_closed_form, evaluate, greedy_improve,
                               observation_values, performance_difference, trpo_lower_bound)


def test_chain_values():
    ev = evaluate(chain_mdp(4), np.ones((5, 1)), per_state=True)
    np.testing.assert_allclose(ev.v, [4, 3, 2, 1, 0])
    assert ev.J == 4


@given(st.integers(2, 7), st.integers(1, 4), st.integers(0, 5000))
def test_exact_solve_matches_bellman_iteration(S, A, seed):
    m = random_mdp(S, A, seed=seed, discount=0.9)
    pi = np.random.default_rng(seed).dirichlet(np.ones(A), size=S)
    ev = evaluate(m, pi, per_state=True)
    v, q = bellman_iteration(m, pi)
    np.testing.assert_allclose(ev.v, v, atol=1e-10)
    np.testing.assert_allclose(ev.q, q, atol=1e-10)


def test_monte_carlo_agrees_with_exact_return():
    m = random_mdp(5, 2, seed=7, discount=0.8)
    pi = np.tile([0.3, 0.7], (5, 1))
    rng = np.random.default_rng(0)
    returns = np.array([sample_episode(m, pi, rng).episode_return for _ in range(4000)])
    J = evaluate(m, pi).J
    assert abs(returns.mean() - J) < 4 * returns.std() / np.sqrt(len(returns))


@pytest.mark.parametrize("p", [0.0, 0.2, 0.5, 0.625, 0.9, 1.0])
def test_aliased_closed_form_matches_exact_solve(p):
    m = aliased_mdp()
    ev = evaluate(m, np.array([[p, 1 - p]]))
    cf = aliased_closed_form(p)
    np.testing.assert_allclose(ev.v[:3], [cf.v1, cf.v2, cf.v3], atol=1e-12)
    if 0 < p < 1:
        v_obs, q_obs = observation_values(m, ev)
        np.testing.assert_allclose(q_obs[0], [cf.q_up, cf.q_down], atol=1e-12)
        assert v_obs[0] == pytest.approx(cf.v_phi, abs=1e-12)


def test_aliased_optimum_by_grid_search():
    m = aliased_mdp()
    ps = np.linspace(0, 1, 1601)
    J = [evaluate(m, np.array([[p, 1 - p]])).J for p in ps]
    assert ps[int(np.argmax(J))] == pytest.approx(0.625)
    assert max(J) == pytest.approx(9 / 16, abs=1e-12)


def test_visitation_weights_at_optimum():
    ev = evaluate(aliased_mdp(), np.array([[0.625, 0.375]]))
    np.testing.assert_allclose(ev.d, [0.5, 0.3125, 0.1875, 0.0])


def test_discount_one_without_absorption_raises():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    m = TabularMDP(P, np.ones((2, 1, 2)), [1.0, 0.0], 1.0, [False, False], [0, 1])
    with pytest.raises(NonConvergenceError):
        evaluate(m, np.ones((2, 1)))


def test_greedy_ties_lowest_index():
    np.testing.assert_array_equal(greedy_improve([[1.0, 1.0], [0.0, 2.0]]), [[1, 0], [0, 1]])


@given(st.integers(0, 100_000))
def test_performance_difference_identity(seed):
    rng = np.random.default_rng(seed)
    S, A = int(rng.integers(2, 9)), int(rng.integers(2, 5))
    m = random_mdp(S, A, seed=seed, discount=0.9)
    a, b = rng.dirichlet(np.ones(A), size=(2, S))
    lhs = evaluate(m, a, per_state=True).J - evaluate(m, b, per_state=True).J
    assert performance_difference(m, a, b, per_state=True) == pytest.approx(lhs, abs=1e-8)


@given(st.integers(0, 100_000), st.floats(0.0, 1.0))
def test_trpo_bound_never_violated(seed, mix):
    rng = np.random.default_rng(seed)
    S, A = int(rng.integers(2, 9)), int(rng.integers(2, 5))
    m = random_mdp(S, A, seed=seed, discount=0.9)
    prior = rng.dirichlet(np.ones(A), size=S)
    new = mix * rng.dirichlet(np.ones(A), size=S) + (1 - mix) * prior
    assert trpo_lower_bound(m, new, prior, per_state=True).satisfied


def test_trpo_bound_is_tight_at_identical_policies():
    m = random_mdp(4, 2, seed=1)
    pi = np.full((4, 2), 0.5)
    r = trpo_lower_bound(m, pi, pi, per_state=True)
    assert r.alpha == 0 and r.bound == pytest.approx(0.0, abs=1e-12)


def test_trpo_bound_requires_discount_below_one():
    with pytest.raises(ValidationError):
        trpo_lower_bound(aliased_mdp(), np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]]))


def test_policy_shape_checked():
    with pytest.raises(ValidationError):
        evaluate(aliased_mdp(), np.array([[0.5, 0.5], [0.5, 0.5]]))
