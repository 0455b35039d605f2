"""scikit-learn style wrapper around the trainer.

``fit`` takes a :class:`~muesli_lab.env.TabularMDP` instead of ``(X, y)``;
``predict_proba``/``predict`` map observation ids to the learned policy and
``score`` returns the exact expected return of that policy.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ValidationError
from .env import TabularMDP
from .oracle import evaluate
from .trainer import Runner, TrainConfig
from .updates import UpdateConfig


class MuesliAgent(BaseEstimator):
    """Policy learner for tabular MDPs.

    Hyperparameters mirror :class:`TrainConfig` and :class:`UpdateConfig`;
    unlisted ones keep their defaults.

    Attributes set by ``fit``: ``policy_`` (online policy per observation),
    ``prior_policy_`` (target-network policy), ``history_`` (metric rows),
    ``n_obs_``, ``n_actions_`` and ``n_steps_``.
    """

    def __init__(self, variant="muesli", lambda_cmpo=1.0, clip_c=1.0, total_steps=20_000,
                 batch_size=32, seq_length=10, replay_fraction=0.75, learning_rate=3e-3,
                 unroll_steps=5, model_policy_loss=True, net_mode="tabular", eval_interval=500,
                 seed=0):
        self.variant = variant
        self.lambda_cmpo = lambda_cmpo
        self.clip_c = clip_c
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.seq_length = seq_length
        self.replay_fraction = replay_fraction
        self.learning_rate = learning_rate
        self.unroll_steps = unroll_steps
        self.model_policy_loss = model_policy_loss
        self.net_mode = net_mode
        self.eval_interval = eval_interval
        self.seed = seed

    def _config(self):
        update = UpdateConfig(variant=self.variant, lambda_cmpo=self.lambda_cmpo, clip_c=self.clip_c,
                              model_policy_loss=self.model_policy_loss)
        return TrainConfig(total_steps=self.total_steps, batch_size=self.batch_size,
                           seq_length=self.seq_length, replay_fraction=self.replay_fraction,
                           learning_rate=self.learning_rate, unroll_steps=self.unroll_steps,
                           net_mode=self.net_mode, eval_interval=self.eval_interval,
                           seed=self.seed, update=update)

    def fit(self, mdp, y=None):
        if not isinstance(mdp, TabularMDP):
            raise ValidationError("fit expects a TabularMDP")
        result = Runner(self._config(), mdp).run()
        self.policy_ = result.policy
        self.prior_policy_ = result.prior_policy
        self.history_ = result.history
        self.n_obs_ = mdp.num_obs
        self.n_actions_ = mdp.num_actions
        self.n_steps_ = result.state.step
        return self

    def _obs(self, obs):
        check_is_fitted(self, "policy_")
        obs = np.asarray(obs, dtype=np.int64).ravel()
        if obs.size and (obs.min() < 0 or obs.max() >= self.n_obs_):
            raise ValidationError(f"observation id out of range [0, {self.n_obs_})")
        return obs

    def predict_proba(self, obs):
        idx = self._obs(obs)
        return self.policy_[idx]

    def predict(self, obs):
        """Greedy action per observation."""
        return np.argmax(self.predict_proba(obs), axis=1)

    def score(self, mdp, y=None):
        check_is_fitted(self, "policy_")
        if mdp.num_obs != self.n_obs_ or mdp.num_actions != self.n_actions_:
            raise ValidationError("MDP shape differs from the one the agent was fitted on")
        return evaluate(mdp, self.policy_).J
