import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from muesli_lab._validation import ValidationError
from muesli_lab.env import aliased_mdp, random_mdp
from muesli_lab.estimator import MuesliAgent


def test_get_set_params_and_clone():
    agent = MuesliAgent(variant="ppo", total_steps=10)
    params = agent.get_params()
    assert params["variant"] == "ppo" and params["total_steps"] == 10
    agent.set_params(lambda_cmpo=0.3)
    twin = clone(agent)
    assert twin.get_params() == agent.get_params() and twin is not agent


def test_fit_predict_score():
    agent = MuesliAgent(total_steps=60, eval_interval=30).fit(aliased_mdp())
    proba = agent.predict_proba([0, 0])
    assert proba.shape == (2, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert agent.predict([0]).shape == (1,)
    assert -1.0 <= agent.score(aliased_mdp()) <= 1.0
    assert agent.n_steps_ == 60 and len(agent.history_) == 2


def test_not_fitted():
    with pytest.raises(NotFittedError):
        MuesliAgent().predict([0])


def test_input_validation():
    agent = MuesliAgent(total_steps=20, eval_interval=20).fit(aliased_mdp())
    with pytest.raises(ValidationError):
        agent.predict([1])
    with pytest.raises(ValidationError):
        agent.score(random_mdp(3, 2))
    with pytest.raises(ValidationError):
        MuesliAgent().fit("aliased")


def test_fit_is_deterministic():
    a = MuesliAgent(total_steps=40, eval_interval=20, seed=3).fit(random_mdp(4, 3, seed=0))
    b = MuesliAgent(total_steps=40, eval_interval=20, seed=3).fit(random_mdp(4, 3, seed=0))
    np.testing.assert_array_equal(a.policy_, b.policy_)
