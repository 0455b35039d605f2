"""Policy losses: Muesli (PG + CMPO regularizer) and the baseline family.

Every loss consumes a :class:`PolicyBatch` of ``N`` states and returns a
:class:`LossOut` holding the batch-mean loss and its gradient with respect to
the online policy logits.  Quantities that come from the target network or the
data (prior probs, advantages, clipped importance weights, sampled KL actions)
are inputs, i.e. constants for differentiation.
"""

from dataclasses import dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

from ._validation import ValidationError
from .approx import log_softmax, softmax
from .targets import ClipConfig, clip_advantages, cmpo_target, mpo_target

VARIANTS = ("muesli", "pg", "pg_trpo", "ppo", "mpo_indirect", "mpo_direct", "cmpo_indirect")

DEFAULT_ENTROPY = {"pg": 0.003, "pg_trpo": 0.0003, "ppo": 0.0003}


@dataclass(frozen=True)
class UpdateConfig:
    """Policy-loss selection and weights.

    ``entropy_weight=None`` picks the per-variant default (0.003 for PG,
    0.0003 for PG+TRPO and PPO, 0 otherwise).  ``kl_samples=None`` uses the
    exact KL instead of the sampled estimator.
    """

    variant: str = "muesli"
    lambda_cmpo: float = 1.0
    clip_c: float = 1.0
    entropy_weight: Optional[float] = None
    trpo_weight: float = 0.01
    ppo_epsilon: float = 0.5
    kl_samples: Optional[int] = 16
    z_init: float = 1.0
    policy_weight: float = 3.0
    mpo_temperature: float = 1.0
    mpo_direct_weight: float = 1.0
    model_policy_loss: bool = True
    adv_scale: float = 1.0
    prior_mix: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(
                f"unknown variant {self.variant!r}; valid variants: {', '.join(VARIANTS)}"
            )
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ValidationError(f"{f.name} must be >= 0, got {v}")
        ClipConfig(self.clip_c)
        if self.kl_samples is not None and self.kl_samples < 1:
            raise ValidationError("kl_samples must be >= 1 or None")
        if self.mpo_temperature <= 0:
            raise ValidationError("mpo_temperature must be > 0")

    @property
    def entropy(self):
        if self.entropy_weight is not None:
            return self.entropy_weight
        return DEFAULT_ENTROPY.get(self.variant, 0.0)

    @property
    def uses_model_policy(self):
        return self.model_policy_loss and self.variant in ("muesli", "cmpo_indirect", "mpo_indirect")


class PolicyBatch(NamedTuple):
    logits: np.ndarray           # (N, A) online policy logits
    prior_probs: np.ndarray      # (N, A)
    behavior_probs: np.ndarray   # (N, A)
    actions: np.ndarray          # (N,)
    pg_advantages: np.ndarray    # (N,) normalized G - v_prior
    advantages: np.ndarray       # (N, A) normalized q_prior - v_prior
    is_weights: np.ndarray       # (N,) min(1, pi/mu), held constant
    kl_actions: Optional[np.ndarray] = None  # (N, S) samples from the prior


class LossOut(NamedTuple):
    loss: float
    d_logits: np.ndarray
    parts: Optional[dict] = None


def clipped_is_weights(probs, behavior_probs, actions):
    """``min(1, pi(a) / mu(a))`` for the taken actions."""
    idx = np.arange(len(actions))
    mu = behavior_probs[idx, actions]
    if np.any(mu <= 0):
        raise ValidationError("behavior probability of a taken action is zero")
    return np.minimum(1.0, probs[idx, actions] / mu)


def _onehot(actions, A):
    out = np.zeros((len(actions), A))
    out[np.arange(len(actions)), actions] = 1.0
    return out


def _xlogx_ratio(p, logq):
    """``sum p (log p - log q)`` with ``0 log 0 = 0``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    return np.sum(np.where(p > 0, p * (logp - logq), 0.0), axis=-1)


def kl_to_policy(target, logits):
    """``KL(target || softmax(logits))`` per row and its gradient w.r.t. logits."""
    return _xlogx_ratio(target, log_softmax(logits)), softmax(logits) - target


def pg_term(b):
    """Clipped-IS policy gradient surrogate ``-w * adv * log pi(a)``.

    Its gradient equals that of ``-(pi(a)/mu(a)) * adv`` whenever the weight is
    not clipped.
    """
    N, A = b.logits.shape
    logp = log_softmax(b.logits)
    coef = b.is_weights * b.pg_advantages
    loss = -float(np.mean(coef * logp[np.arange(N), b.actions]))
    d = -coef[:, None] * (_onehot(b.actions, A) - softmax(b.logits)) / N
    return loss, d


def entropy_term(logits, weight):
    """``-weight * H[pi]`` (batch mean) and its logit gradient."""
    N = logits.shape[0]
    p = softmax(logits)
    logp = log_softmax(logits)
    H = -np.sum(p * logp, axis=-1)
    d = weight * p * (logp + H[:, None]) / N
    return -weight * float(np.mean(H)), d, H


def entropy(probs):
    probs = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.sum(np.where(probs > 0, probs * np.log(np.where(probs > 0, probs, 1.0)), 0.0), -1)


def cmpo_kl_term(b, config, exact_z=False):
    """``lambda * KL(pi_cmpo, pi)``, exact or via the sampled estimator.

    ``exact_z`` replaces the leave-one-out normalizer of the sampled estimator
    with the true one (used to isolate its bias).
    """
    N, A = b.logits.shape
    lam = config.lambda_cmpo
    if config.kl_samples is None or b.kl_actions is None:
        target = cmpo_target(b.prior_probs, b.advantages, config.clip_c).probs
        kl, d = kl_to_policy(target, b.logits)
        return lam * float(np.mean(kl)), lam * d / N
    w = sampled_kl_weights(b.advantages, b.kl_actions, config.clip_c, config.z_init,
                           exact_prior=b.prior_probs if exact_z else None)
    logp = log_softmax(b.logits)
    picked = np.take_along_axis(logp, b.kl_actions, axis=1)
    loss = -lam * float(np.mean(np.sum(w * picked, axis=1)))
    counts = np.zeros((N, A))
    np.add.at(counts, (np.repeat(np.arange(N), b.kl_actions.shape[1]), b.kl_actions.ravel()), w.ravel())
    d = -lam * (counts - w.sum(axis=1, keepdims=True) * softmax(b.logits)) / N
    return loss, d


def sampled_kl_weights(advantages, kl_actions, clip_c, z_init=1.0, exact_prior=None):
    """Row-wise version of :func:`muesli_lab.targets.kl_sample_weights`."""
    e = np.exp(clip_advantages(advantages, clip_c))
    ek = np.take_along_axis(e, kl_actions, axis=1)
    S = kl_actions.shape[1]
    if exact_prior is not None:
        z = np.sum(exact_prior * e, axis=1, keepdims=True)
    else:
        z = (z_init + ek.sum(axis=1, keepdims=True) - ek) / S
    return ek / z / S


def muesli_loss(b, config):
    """PG surrogate plus ``lambda * KL(pi_cmpo, pi)``.

    The model policy loss ``L_m`` is added by the learner, which owns the
    model unroll.
    """
    pg, d_pg = pg_term(b)
    kl, d_kl = cmpo_kl_term(b, config)
    return LossOut(pg + kl, d_pg + d_kl, {"pg": pg, "cmpo_kl": kl})


def pg_loss(b, config):
    pg, d_pg = pg_term(b)
    ent, d_ent, _ = entropy_term(b.logits, config.entropy)
    return LossOut(pg + ent, d_pg + d_ent, {"pg": pg, "entropy": ent})


def pg_trpo_loss(b, config):
    base = pg_loss(b, config)
    N = b.logits.shape[0]
    kl, d = kl_to_policy(b.behavior_probs, b.logits)
    trpo = config.trpo_weight * float(np.mean(kl))
    return LossOut(base.loss + trpo, base.d_logits + config.trpo_weight * d / N,
                   {**base.parts, "trpo_kl": trpo})


def ppo_surrogate(ratio, adv, eps):
    """``min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)``."""
    return np.minimum(ratio * adv, np.clip(ratio, 1 - eps, 1 + eps) * adv)


def ppo_loss(b, config):
    N, A = b.logits.shape
    p = softmax(b.logits)
    idx = np.arange(N)
    mu = b.behavior_probs[idx, b.actions]
    if np.any(mu <= 0):
        raise ValidationError("behavior probability of a taken action is zero")
    ratio = p[idx, b.actions] / mu
    adv = b.pg_advantages
    eps = config.ppo_epsilon
    surr = ppo_surrogate(ratio, adv, eps)
    # only the unclipped branch depends on the logits
    active = ratio * adv <= np.clip(ratio, 1 - eps, 1 + eps) * adv
    coef = np.where(active, adv * ratio, 0.0)
    d = -coef[:, None] * (_onehot(b.actions, A) - p) / N
    ent, d_ent, _ = entropy_term(b.logits, config.entropy)
    loss = -float(np.mean(surr))
    return LossOut(loss + ent, d + d_ent, {"ppo": loss, "entropy": ent})


def mpo_indirect_loss(b, config):
    """Distillation ``KL(pi_mpo, pi)`` with a fixed temperature."""
    N = b.logits.shape[0]
    target = mpo_target(b.prior_probs, b.advantages, config.mpo_temperature)
    kl, d = kl_to_policy(target, b.logits)
    loss = float(np.mean(kl))
    return LossOut(loss, d / N, {"mpo_kl": loss})


def mpo_direct_loss(b, config):
    """PG surrogate plus ``lambda * KL(pi, pi_prior)`` (reverse direction)."""
    N = b.logits.shape[0]
    pg, d_pg = pg_term(b)
    p = softmax(b.logits)
    logp = log_softmax(b.logits)
    with np.errstate(divide="ignore"):
        log_prior = np.log(b.prior_probs)
    diff = logp - log_prior
    kl = np.sum(p * diff, axis=1)
    lam = config.mpo_direct_weight
    d_kl = lam * p * (diff - kl[:, None]) / N
    reg = lam * float(np.mean(kl))
    return LossOut(pg + reg, d_pg + d_kl, {"pg": pg, "reverse_kl": reg})


def cmpo_indirect_loss(b, config):
    kl, d = cmpo_kl_term(b, config)
    return LossOut(kl, d, {"cmpo_kl": kl})


LOSSES = {
    "muesli": muesli_loss,
    "pg": pg_loss,
    "pg_trpo": pg_trpo_loss,
    "ppo": ppo_loss,
    "mpo_indirect": mpo_indirect_loss,
    "mpo_direct": mpo_direct_loss,
    "cmpo_indirect": cmpo_indirect_loss,
}


def policy_loss(b, config):
    return LOSSES[config.variant](b, config)


def model_policy_targets(prior_probs, advantages, config):
    """Targets for the model's policy head, or None if the variant has none."""
    if not config.uses_model_policy:
        return None
    if config.variant == "mpo_indirect":
        return mpo_target(prior_probs, advantages, config.mpo_temperature)
    return cmpo_target(prior_probs, advantages, config.clip_c).probs
