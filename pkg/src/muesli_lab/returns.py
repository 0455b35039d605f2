"""Off-policy multi-step returns and the moving-variance advantage normalizer.

Batched estimators take ``(B, T)`` step arrays plus ``(B, T + 1, A)`` per-state
arrays whose extra row holds the state after the last step.  Sequences shorter
than ``T`` are left-aligned and described by a ``valid`` mask; for a sequence of
length ``n`` the bootstrap state lives at row ``n``.
"""

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from ._validation import ValidationError


class ReturnEstimate(NamedTuple):
    returns: np.ndarray
    advantages: np.ndarray
    value_targets: Optional[np.ndarray] = None


def _taken(x, actions):
    return np.take_along_axis(x, actions[..., None], axis=-1)[..., 0]


def _check_behavior(mu_taken, valid):
    if np.any((mu_taken <= 0) & valid):
        raise ValidationError("behavior probability of a taken action is zero")


def expected_q(q_hat, pi, num_samples=None, rng=None):
    """``E_{A ~ pi}[q_hat(s, A)]`` exactly, or from ``num_samples`` draws per state."""
    if num_samples is None:
        return np.sum(pi * q_hat, axis=-1)
    rng = np.random.default_rng(rng)
    cum = np.cumsum(pi, axis=-1)
    u = rng.random(pi.shape[:-1] + (num_samples,))
    idx = np.minimum((u[..., None] >= cum[..., None, :]).sum(-1), pi.shape[-1] - 1)
    return np.take_along_axis(q_hat, idx, axis=-1).mean(axis=-1)


def retrace_batch(q_hat, pi, actions, rewards, discounts, behavior_taken, lam=0.95,
                  valid=None, num_samples=None, rng=None):
    """Retrace estimates of ``q_pi(s_t, a_t)`` for a padded batch.

    ``G_t = r_t + d_t (E_pi q(s_{t+1}) - c_{t+1} q(s_{t+1}, a_{t+1}) + c_{t+1} G_{t+1})``
    with ``c = lam * min(1, pi(a) / mu(a))``; the last valid step bootstraps
    from ``E_pi q`` at its successor state.

    Args:
        q_hat, pi: ``(B, T + 1, A)`` action values and target-policy probs.
        actions, rewards, discounts, behavior_taken: ``(B, T)``.
        valid: ``(B, T)`` boolean prefix mask (all valid by default).
    """
    q_hat = np.asarray(q_hat, dtype=float)
    pi = np.asarray(pi, dtype=float)
    B, T = np.shape(actions)
    valid = np.ones((B, T), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must lie in [0, 1], got {lam}")
    _check_behavior(behavior_taken, valid)
    ev = expected_q(q_hat, pi, num_samples, rng)
    safe_a = np.where(valid, actions, 0)
    q_taken = _taken(q_hat[:, :T], safe_a)
    pi_taken = _taken(pi[:, :T], safe_a)
    mu = np.where(valid, behavior_taken, 1.0)
    c = lam * np.minimum(1.0, pi_taken / mu)
    G = np.zeros((B, T))
    g_next = np.zeros(B)
    for t in range(T - 1, -1, -1):
        nv = valid[:, t + 1] if t + 1 < T else np.zeros(B, dtype=bool)
        if t + 1 < T:
            corr = np.where(nv, c[:, t + 1] * (q_taken[:, t + 1] - g_next), 0.0)
        else:
            corr = 0.0
        g = rewards[:, t] + discounts[:, t] * (ev[:, t + 1] - corr)
        G[:, t] = np.where(valid[:, t], g, 0.0)
        g_next = G[:, t]
    return G


def retrace(traj, q_hat, pi, lam=0.95, v_hat=None, num_samples=None, rng=None):
    """Retrace for a single :class:`~muesli_lab.env.Trajectory`.

    Args:
        q_hat, pi: ``(len(traj) + 1, A)``; the last row is the state after the
            final step (ignored when that step terminated).
        v_hat: optional ``(len(traj),)`` baseline; advantages are ``G - v_hat``
            (``G - E_pi q_hat`` when omitted).
    """
    T = len(traj)
    mu = _taken(traj.behavior_probs, traj.actions) if T else np.zeros(0)
    G = retrace_batch(np.asarray(q_hat)[None], np.asarray(pi)[None], traj.actions[None],
                      traj.rewards[None], traj.discounts[None], mu[None], lam,
                      num_samples=num_samples, rng=rng)[0]
    base = np.asarray(v_hat) if v_hat is not None else np.sum(np.asarray(pi)[:T] * np.asarray(q_hat)[:T], -1)
    return ReturnEstimate(G, G - base)


def vtrace_batch(v_hat, pi_taken, actions, rewards, discounts, behavior_taken, lam=1.0,
                 clip_rho=1.0, clip_c=1.0, valid=None):
    """V-trace value targets ``v_s`` and policy-gradient returns ``r_s + d_s v_{s+1}``.

    ``v_s = V(s) + rho_s delta_s + d_s c_s (v_{s+1} - V(s+1))`` with
    ``rho = min(clip_rho, pi/mu)`` and ``c = lam * min(clip_c, pi/mu)``.

    Args:
        v_hat: ``(B, T + 1)`` state values including the bootstrap state.
        pi_taken, behavior_taken: ``(B, T)`` probabilities of the taken actions.
    Returns:
        ``(value_targets, pg_returns)``, both ``(B, T)``.
    """
    B, T = np.shape(actions)
    valid = np.ones((B, T), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    _check_behavior(behavior_taken, valid)
    ratio = np.asarray(pi_taken) / np.where(valid, behavior_taken, 1.0)
    rho = np.minimum(clip_rho, ratio)
    c = lam * np.minimum(clip_c, ratio)
    vs = np.zeros((B, T + 1))
    pg = np.zeros((B, T))
    for t in range(T - 1, -1, -1):
        nv = valid[:, t + 1] if t + 1 < T else np.zeros(B, dtype=bool)
        # successor value target: recursive when the next step exists, else bootstrap
        v_next = np.where(nv, vs[:, t + 1], v_hat[:, t + 1])
        delta = rewards[:, t] + discounts[:, t] * v_hat[:, t + 1] - v_hat[:, t]
        v_t = v_hat[:, t] + rho[:, t] * delta + discounts[:, t] * c[:, t] * (v_next - v_hat[:, t + 1])
        vs[:, t] = np.where(valid[:, t], v_t, 0.0)
        pg[:, t] = np.where(valid[:, t], rewards[:, t] + discounts[:, t] * v_next, 0.0)
    return vs[:, :T], pg


def vtrace(traj, v_hat, pi, lam=1.0, clip_rho=1.0, clip_c=1.0):
    """V-trace for one trajectory; ``v_hat`` has ``len(traj) + 1`` entries."""
    pi = np.asarray(pi)
    T = len(traj)
    mu = _taken(traj.behavior_probs, traj.actions)
    pit = _taken(pi[:T], traj.actions)
    v_hat = np.asarray(v_hat, dtype=float)
    vs, pg = vtrace_batch(v_hat[None], pit[None], traj.actions[None], traj.rewards[None],
                          traj.discounts[None], mu[None], lam, clip_rho, clip_c)
    return ReturnEstimate(pg[0], pg[0] - v_hat[:T], vs[0])


@dataclass(frozen=True)
class AdvNormState:
    """Moving second moment of advantages with Adam-style bias correction."""

    var: float = 0.0
    beta_product: float = 1.0
    beta_var: float = 0.99
    eps_var: float = 1e-12

    def __post_init__(self):
        if self.var < 0 or not 0 < self.beta_product <= 1:
            raise ValidationError("invalid normalizer state")

    @property
    def corrected_var(self):
        if self.beta_product >= 1.0:
            raise ValidationError("normalizer has not seen any batch yet")
        return self.var / (1.0 - self.beta_product)


def norm_update(state, advantages):
    adv = np.asarray(advantages, dtype=float).ravel()
    if adv.size == 0:
        raise ValidationError("advantage batch is empty")
    b = state.beta_var
    return replace(state, var=b * state.var + (1.0 - b) * float(np.mean(adv * adv)),
                   beta_product=state.beta_product * b)


def normalize(state, advantage):
    return np.asarray(advantage, dtype=float) / np.sqrt(state.corrected_var + state.eps_var)
