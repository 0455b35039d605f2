"""MPO and clipped-MPO (CMPO) target policies and their total-variation geometry.

All functions treat the last axis as the action axis, so they apply to a single
state or to a batch of states alike.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import ValidationError


@dataclass(frozen=True)
class ClipConfig:
    """Advantage clipping threshold ``c``; ``tanh(c / 2)`` bounds the TV move."""

    c: float = 1.0

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValidationError(f"clipping threshold must be a finite c > 0, got {self.c}")

    @classmethod
    def from_max_tv(cls, eps):
        """Threshold whose worst-case total variation equals ``eps``."""
        if not 0 < eps < 1:
            raise ValidationError("max total variation must lie in (0, 1)")
        return cls(2.0 * math.atanh(eps))


class CmpoTarget(NamedTuple):
    probs: np.ndarray
    z: np.ndarray


class TheoremReport(NamedTuple):
    c: float
    numeric_max: float
    analytic_max: float
    argmax_p: float
    analytic_argmax_p: float

    @property
    def passed(self):
        return (abs(self.numeric_max - self.analytic_max) < 1e-6
                and abs(self.argmax_p - self.analytic_argmax_p) < 1e-5)


def _as_c(clip):
    return clip.c if isinstance(clip, ClipConfig) else ClipConfig(float(clip)).c


def clip_advantages(advantages, clip):
    c = _as_c(clip)
    return np.clip(np.asarray(advantages, dtype=float), -c, c)


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def _reweight(prior, scores):
    """``prior * exp(scores) / z`` in the log domain; returns ``(probs, z)``."""
    prior = np.asarray(prior, dtype=float)
    logits = _log(prior) + scores
    shift = np.max(logits, axis=-1, keepdims=True)
    w = np.exp(logits - shift)
    total = w.sum(axis=-1, keepdims=True)
    probs = w / total
    with np.errstate(over="ignore"):
        # z may legitimately overflow for huge scores; probs stay exact
        z = np.squeeze(total, -1) * np.exp(np.squeeze(shift, -1))
    return probs, z


def mpo_target(prior, q, lam=1.0):
    """``prior(a) exp(q(a) / lam) / z``, the closed-form KL-regularized optimum."""
    if not lam > 0:
        raise ValidationError(f"temperature must be > 0, got {lam}")
    return _reweight(prior, np.asarray(q, dtype=float) / lam)[0]


def cmpo_target(prior, advantages, clip=ClipConfig()):
    """``prior(a) exp(clip(adv(a), -c, c)) / z`` together with ``z``."""
    prior = np.asarray(prior, dtype=float)
    adv = np.broadcast_to(clip_advantages(advantages, clip), prior.shape)
    probs, z = _reweight(prior, adv)
    return CmpoTarget(probs, z)


def total_variation(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValidationError(f"shape mismatch: {p.shape} vs {q.shape}")
    return 0.5 * np.abs(p - q).sum(axis=-1)


def max_tv(clip):
    return math.tanh(_as_c(clip) / 2.0)


def worst_case_prior_mass(clip):
    """Prior mass on the ``+c`` action that maximizes the two-action TV."""
    c = _as_c(clip)
    return (1.0 - math.exp(-c)) / (math.exp(c) - math.exp(-c))


def verify_theorem(clip, resolution=1e-4, newton_steps=3, check=True):
    """Numerically maximize the two-action CMPO total variation over the prior.

    The prior ``[p, 1 - p]`` is paired with advantages ``[c, -c]``; TV is
    evaluated through :func:`cmpo_target` on a grid of spacing ``resolution``
    and the best grid point is polished by Newton steps on the closed-form
    derivative ``1 / D(p)^2 - 1`` with ``D(p) = p e^c + (1 - p) e^-c``.
    """
    c = _as_c(clip)
    adv = np.array([c, -c])

    def tv(p):
        prior = np.stack([p, 1.0 - p], axis=-1)
        return total_variation(cmpo_target(prior, adv, c).probs, prior)

    grid = np.arange(resolution, 1.0, resolution)
    values = tv(grid)
    p = float(grid[np.argmax(values)])
    ec, emc = math.exp(c), math.exp(-c)
    for _ in range(newton_steps):
        D = p * ec + (1 - p) * emc
        grad = 1.0 / D**2 - 1.0
        hess = -2.0 * (ec - emc) / D**3
        p = min(max(p - grad / hess, 0.0), 1.0)
    report = TheoremReport(c, float(tv(np.array(p))), max_tv(c), p, worst_case_prior_mass(c))
    if check and not report.passed:
        raise AssertionError(f"CMPO TV theorem check failed at p={p}: {report}")
    return report


def random_tv_search(clip, num_instances=10_000, max_actions=16, seed=0):
    """Largest CMPO TV found over random priors with advantages in ``{-c, c}``."""
    c = _as_c(clip)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(num_instances):
        n = int(rng.integers(2, max_actions + 1))
        prior = rng.dirichlet(np.full(n, rng.choice([0.1, 1.0, 10.0])))
        adv = rng.choice([-c, c], size=n)
        worst = max(worst, float(total_variation(cmpo_target(prior, adv, c).probs, prior)))
    return worst


def z_estimate(clipped_exp_advs, leave_out_index, z_init=1.0):
    """Leave-one-out normalizer estimate for the ``i``-th of ``N`` samples.

    ``(z_init + sum_{k != i} exp(clip(adv_k))) / N``; the inputs are already
    the exponentiated clipped advantages.
    """
    x = np.asarray(clipped_exp_advs, dtype=float)
    N = x.size
    if N < 1 or not 0 <= leave_out_index < N:
        raise ValidationError("need N >= 1 and a valid leave-out index")
    return (z_init + x.sum() - x[leave_out_index]) / N


def kl_sample_weights(prior, advantages, clip, sampled_actions, z_init=1.0, exact_z=False):
    """Per-sample weights of the sampled ``KL(pi_cmpo, pi)`` regularizer.

    The loss is ``-sum_k w_k log pi(a_k)`` with
    ``w_k = exp(clip(adv(a_k))) / z_k / N``.  ``z_k`` is the leave-one-out
    estimate, or the exact normalizer when ``exact_z`` is set.
    """
    a = np.asarray(sampled_actions, dtype=np.int64)
    N = a.size
    e = np.exp(clip_advantages(advantages, clip))
    ek = e[a]
    if exact_z:
        z = np.full(N, float(np.asarray(prior) @ e))
    else:
        z = (z_init + ek.sum() - ek) / N
    return ek / z / N
