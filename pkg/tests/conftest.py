import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("lab", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def bellman_iteration(mdp, state_policy, iters=20_000, tol=1e-14):
    """Plain fixed-point iteration of the Bellman expectation operator."""
    r = mdp.expected_reward()
    P = mdp.transition
    v = np.zeros(mdp.num_states)
    for _ in range(iters):
        q = r + mdp.discount * np.einsum("sat,t->sa", P, v * ~mdp.terminal)
        new = np.where(mdp.terminal, 0.0, np.sum(state_policy * q, axis=1))
        if np.max(np.abs(new - v)) < tol:
            v = new
            break
        v = new
    q = r + mdp.discount * np.einsum("sat,t->sa", P, v * ~mdp.terminal)
    return v, q
