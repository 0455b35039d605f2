"""Value-equivalent model: open-loop unrolls of rewards, values and policies.

The model is conditioned on the torso representation ``h(s_t)`` and advances a
hidden state with a one-layer tanh dynamics map::

    z_1 = tanh(W_in h + W_act onehot(a_t) + b)
    z_k = tanh(W_rec z_{k-1} + W_act onehot(a_{t+k-1}) + b)

Linear heads on ``z_k`` predict ``r_hat_k`` (for ``R_{t+k}``), ``v_hat_k`` (for
``v(S_{t+k})``) and policy logits ``pi_hat_k``.  The model never reconstructs
observations.
"""

import math
from typing import NamedTuple

import numpy as np

from ._validation import ValidationError
from .approx import Network, log_softmax, softmax

DEFAULT_UNROLL = 5
MAX_UNROLL = 8


def model_layout(hidden, model_hidden, num_actions):
    """Extra-head spec for :class:`~muesli_lab.approx.Network`."""
    H, Z, A = hidden, model_hidden, num_actions
    return {
        "dyn.w_in": ((Z, H), 1.0 / math.sqrt(H + A)),
        "dyn.w_rec": ((Z, Z), 1.0 / math.sqrt(Z + A)),
        "dyn.w_act": ((Z, A), 1.0 / math.sqrt(H + A)),
        "dyn.b": ((Z,), 0.0),
        "model.reward.w": ((Z,), 0.0),
        "model.reward.b": ((), 0.0),
        "model.value.w": ((Z,), 0.0),
        "model.value.b": ((), 0.0),
        "model.policy.w": ((A, Z), 0.0),
        "model.policy.b": ((A,), 0.0),
    }


def build_network(num_obs, num_actions, mode="tabular", hidden=16, model_hidden=16):
    """Network with policy/value heads plus the model's dynamics and heads."""
    H = num_obs if mode == "tabular" else hidden
    return Network(num_obs, num_actions, mode, hidden,
                   extra_layout=model_layout(H, model_hidden, num_actions))


class ModelUnroll(NamedTuple):
    r_hat: np.ndarray       # (N, K)
    v_hat: np.ndarray       # (N, K)
    pi_logits: np.ndarray   # (N, K, A)


class _UnrollCache(NamedTuple):
    h: np.ndarray
    z: list
    actions: np.ndarray


class ModelLosses(NamedTuple):
    policy: float
    value: float
    reward: float
    d_r: np.ndarray
    d_v: np.ndarray
    d_logits: np.ndarray
    d_base_value: np.ndarray


def _heads(params, z):
    r = z @ params["model.reward.w"] + params["model.reward.b"]
    v = z @ params["model.value.w"] + params["model.value.b"]
    logits = z @ params["model.policy.w"].T + params["model.policy.b"]
    return r, v, logits


def unroll(params, h, actions):
    """Unroll ``K = actions.shape[1]`` steps from representations ``h``.

    Args:
        h: ``(N, H)`` representations (or ``(H,)`` for one state).
        actions: ``(N, K)`` action ids (or ``(K,)``).
    Returns:
        ``(ModelUnroll, cache)``; the cache feeds :func:`unroll_backward`.
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
    N, K = actions.shape
    A = params["dyn.w_act"].shape[1]
    if K < 1:
        raise ValidationError("unroll needs at least one action")
    if h.shape[0] != N:
        raise ValidationError("representations and action sequences disagree on batch size")
    if actions.min() < 0 or actions.max() >= A:
        raise ValidationError(f"action id out of range [0, {A})")
    w_act_t = params["dyn.w_act"].T
    b = params["dyn.b"]
    zs = []
    z = np.tanh(h @ params["dyn.w_in"].T + w_act_t[actions[:, 0]] + b)
    zs.append(z)
    for k in range(1, K):
        z = np.tanh(z @ params["dyn.w_rec"].T + w_act_t[actions[:, k]] + b)
        zs.append(z)
    Zs = np.stack(zs, axis=1)
    r, v, logits = _heads(params, Zs)
    return ModelUnroll(r, v, logits), _UnrollCache(h, zs, actions)


def unroll_backward(params, cache, d_r, d_v, d_logits, grad):
    """Accumulate model gradients into ``grad``; returns ``dL/dh``."""
    K = len(cache.z)
    A = params["dyn.w_act"].shape[1]
    wr, wv, wp = params["model.reward.w"], params["model.value.w"], params["model.policy.w"]
    carry = 0.0
    d_h = None
    for k in range(K - 1, -1, -1):
        z = cache.z[k]
        dr, dv, dl = d_r[:, k], d_v[:, k], d_logits[:, k]
        grad["model.reward.w"][...] += dr @ z
        grad["model.reward.b"][...] += dr.sum()
        grad["model.value.w"][...] += dv @ z
        grad["model.value.b"][...] += dv.sum()
        grad["model.policy.w"][...] += dl.T @ z
        grad["model.policy.b"][...] += dl.sum(axis=0)
        dz = dr[:, None] * wr + dv[:, None] * wv + dl @ wp + carry
        du = dz * (1.0 - z * z)
        ga = np.zeros((A, du.shape[1]))
        np.add.at(ga, cache.actions[:, k], du)
        grad["dyn.w_act"][...] += ga.T
        grad["dyn.b"][...] += du.sum(axis=0)
        if k > 0:
            grad["dyn.w_rec"][...] += du.T @ cache.z[k - 1]
            carry = du @ params["dyn.w_rec"]
        else:
            grad["dyn.w_in"][...] += du.T @ cache.h
            d_h = du @ params["dyn.w_in"]
    return d_h


def one_step_q(params, h, discount):
    """``q_hat(s, a) = r_hat_1(s, a) + discount * v_hat_1(s, a)`` for every action."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    pre = (h @ params["dyn.w_in"].T)[:, None, :] + params["dyn.w_act"].T[None] + params["dyn.b"]
    r, v, _ = _heads(params, np.tanh(pre))
    return r + discount * v


def _kl_rows(target, logits):
    logp = log_softmax(logits)
    with np.errstate(divide="ignore", invalid="ignore"):
        tlogt = np.where(target > 0, target * np.log(np.where(target > 0, target, 1.0)), 0.0)
    return np.sum(tlogt - target * logp, axis=-1)


def model_losses(unrolled, policy_targets, policy_mask, reward_targets, reward_mask,
                 value_targets, value_mask, base_value=None, base_value_target=None):
    """Model policy, value and reward losses with output adjoints.

    ``L_m = mean_n (1/K) sum_k KL(target_k, pi_hat_k)``; value and reward
    losses are half squared errors, averaged per row over ``K`` reward steps and
    ``K + 1`` value predictions (the extra one is the base value head on
    ``s_t`` when ``base_value`` is given).  Masks zero out unavailable targets.
    """
    N, K = unrolled.r_hat.shape
    if np.shape(policy_targets) != unrolled.pi_logits.shape:
        raise ValidationError("policy targets misaligned with the unroll")
    for arr in (policy_mask, reward_targets, reward_mask, value_targets, value_mask):
        if np.shape(arr) != (N, K):
            raise ValidationError("model targets misaligned with the unroll")
    pm = np.asarray(policy_mask, dtype=float)
    rm = np.asarray(reward_mask, dtype=float)
    vm = np.asarray(value_mask, dtype=float)
    targets = np.where(pm[..., None] > 0, policy_targets, 1.0 / unrolled.pi_logits.shape[-1])
    kl = _kl_rows(targets, unrolled.pi_logits)
    L_m = float(np.sum(pm * kl)) / (N * K)
    d_logits = (softmax(unrolled.pi_logits) - targets) * (pm / (N * K))[..., None]

    r_err = (unrolled.r_hat - reward_targets) * rm
    L_r = 0.5 * float(np.sum(r_err * r_err)) / (N * K)
    d_r = r_err / (N * K)

    nv = K + 1 if base_value is not None else K
    v_err = (unrolled.v_hat - value_targets) * vm
    L_v = 0.5 * float(np.sum(v_err * v_err)) / (N * nv)
    d_v = v_err / (N * nv)
    d_base = None
    if base_value is not None:
        b_err = np.asarray(base_value) - np.asarray(base_value_target)
        L_v += 0.5 * float(np.sum(b_err * b_err)) / (N * nv)
        d_base = b_err / (N * nv)
    return ModelLosses(L_m, L_v, L_r, d_r, d_v, d_logits, d_base)
