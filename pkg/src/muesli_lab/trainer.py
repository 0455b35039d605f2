"""Single-process actor/learner loop for the Muesli update and its baselines.

Per training step the actor rolls out episodes with the target-network policy
(``pi_prior``) until the online queue can fill its share of the batch; every
episode is cut into fragments of at most ``seq_length`` steps and appended to
both the online queue and the replay buffer.  The learner then

1. evaluates the target network on the batch (``pi_prior``, ``v_prior`` and
   model-based ``q_prior``) and forms Retrace (or V-trace) returns,
2. updates the advantage-variance estimate and normalizes advantages,
3. evaluates the selected policy loss plus model losses on the online network,
4. takes one clipped Adam step and moves the target network by EMA.
"""

import csv
import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from ._validation import ValidationError
from .approx import ParamVector, load_params, save_params, softmax
from .env import DEFAULT_MAX_LENGTH, sample_episode
from .model import MAX_UNROLL, build_network, model_losses, one_step_q, unroll, unroll_backward
from .oracle import evaluate
from .returns import AdvNormState, norm_update, retrace_batch, vtrace_batch
from .targets import cmpo_target, max_tv, total_variation
from .updates import PolicyBatch, UpdateConfig, clipped_is_weights, model_policy_targets, policy_loss

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "schema", "step", "lr", "J", "J_prior", "tv_max", "tv_max_run", "tv_bound",
    "loss_total", "loss_policy", "loss_model_policy", "loss_value", "loss_reward", "adv_std",
)
SCHEMA_VERSION = 1

PRIOR_MIX_UNIFORM = 0.003
PRIOR_MIX_BEHAVIOR = 0.03


class TrainingDivergedError(RuntimeError):
    """A loss or parameter became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    """Learner, actor and network settings (desk-scale defaults)."""

    batch_size: int = 32
    seq_length: int = 10
    replay_fraction: float = 0.75
    buffer_capacity: int = 50_000
    alpha_target: float = 0.1
    total_steps: int = 20_000
    learning_rate: float = 3e-3
    final_learning_rate: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    unroll_steps: int = 5
    return_estimator: str = "retrace"
    retrace_lambda: float = 0.95
    retrace_samples: Optional[int] = None
    vtrace_lambda: float = 1.0
    value_weight: float = 0.25
    reward_weight: float = 1.0
    beta_var: float = 0.99
    eps_var: float = 1e-12
    net_mode: str = "tabular"
    hidden: int = 16
    model_hidden: int = 16
    eval_interval: int = 500
    max_episode_length: int = DEFAULT_MAX_LENGTH
    update: UpdateConfig = field(default_factory=UpdateConfig)

    def __post_init__(self):
        for name in ("batch_size", "seq_length", "buffer_capacity", "total_steps",
                     "eval_interval", "max_episode_length", "hidden", "model_hidden"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if not 0.0 <= self.replay_fraction <= 1.0:
            raise ValidationError("replay_fraction must lie in [0, 1]")
        if not 0.0 < self.alpha_target <= 1.0:
            raise ValidationError("alpha_target must lie in (0, 1]")
        if not 1 <= self.unroll_steps <= MAX_UNROLL:
            raise ValidationError(f"unroll_steps must lie in 1..{MAX_UNROLL}")
        if self.return_estimator not in ("retrace", "vtrace"):
            raise ValidationError("return_estimator must be 'retrace' or 'vtrace'")
        if not 0.0 <= self.retrace_lambda <= 1.0 or not 0.0 <= self.vtrace_lambda <= 1.0:
            raise ValidationError("trace lambdas must lie in [0, 1]")
        if self.learning_rate < 0 or self.final_learning_rate < 0:
            raise ValidationError("learning rates must be >= 0")
        if self.net_mode not in ("tabular", "mlp"):
            raise ValidationError("net_mode must be 'tabular' or 'mlp'")
        if not 0.0 < self.beta_var < 1.0:
            raise ValidationError("beta_var must lie in (0, 1)")

    @property
    def num_replay(self):
        return int(round(self.replay_fraction * self.batch_size))

    @property
    def num_online(self):
        return self.batch_size - self.num_replay

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        upd = UpdateConfig(**doc.pop("update", {}))
        return cls(update=upd, **doc)


class Fragment(NamedTuple):
    """Up to ``seq_length`` consecutive steps of one episode.

    ``obs``/``states`` have one extra entry for the state after the last step;
    ``ended`` is true when the last step entered a terminal state.
    """

    obs: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    discounts: np.ndarray
    behavior: np.ndarray
    ended: bool

    @property
    def size(self):
        return len(self.actions)


def split_trajectory(traj, seq_length):
    n = len(traj)
    obs = np.append(traj.obs, traj.final_obs)
    states = np.append(traj.states, traj.final_state)
    out = []
    for start in range(0, n, seq_length):
        stop = min(start + seq_length, n)
        out.append(Fragment(obs[start:stop + 1], states[start:stop + 1], traj.actions[start:stop],
                            traj.rewards[start:stop], traj.discounts[start:stop],
                            traj.behavior_probs[start:stop],
                            bool(stop == n and n > 0 and traj.dones[-1])))
    return out


class ReplayBuffer:
    """FIFO-evicting store of fragments with a capacity counted in steps."""

    def __init__(self, capacity):
        self.capacity = int(capacity)
        self._items = deque()
        self.num_steps = 0

    def __len__(self):
        return len(self._items)

    def add(self, fragment):
        self._items.append(fragment)
        self.num_steps += fragment.size
        while self.num_steps > self.capacity and len(self._items) > 1:
            self.num_steps -= self._items.popleft().size

    def sample(self, n, rng):
        if n and not self._items:
            raise ValidationError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, len(self._items), size=n)
        return [self._items[i] for i in idx]

    def items(self):
        return list(self._items)


@dataclass
class OptimizerState:
    """Adam moments plus a linear learning-rate schedule."""

    m: np.ndarray
    v: np.ndarray
    step: int
    base_lr: float
    final_lr: float
    total_steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params, config):
        return cls(np.zeros(params.size), np.zeros(params.size), 0, config.learning_rate,
                   config.final_learning_rate, config.total_steps, config.adam_beta1,
                   config.adam_beta2, config.adam_eps)

    def lr_at(self, step):
        frac = min(step, self.total_steps) / self.total_steps
        return self.base_lr + (self.final_lr - self.base_lr) * frac


def clipped_adam_step(params, grad, opt):
    """``theta -= lr * clip(m_hat / (sqrt(v_hat) + eps), -1, 1)``.

    Returns ``(new_params, new_opt, applied_update)``.
    """
    g = grad.data
    t = opt.step + 1
    m = opt.beta1 * opt.m + (1 - opt.beta1) * g
    v = opt.beta2 * opt.v + (1 - opt.beta2) * g * g
    m_hat = m / (1 - opt.beta1 ** t)
    v_hat = v / (1 - opt.beta2 ** t)
    lr = opt.lr_at(t)
    update = -lr * np.clip(m_hat / (np.sqrt(v_hat) + opt.eps), -1.0, 1.0)
    return params.with_data(params.data + update), replace(opt, m=m, v=v, step=t), update


def ema_update(target, online, alpha):
    return target.with_data((1.0 - alpha) * target.data + alpha * online.data)


@dataclass
class LearnerState:
    params: ParamVector
    target: ParamVector
    norm: AdvNormState
    opt: OptimizerState
    step: int = 0
    tv_max_run: float = 0.0


class Batch(NamedTuple):
    obs: np.ndarray        # (B, T + 1)
    actions: np.ndarray    # (B, T)
    rewards: np.ndarray
    discounts: np.ndarray
    behavior: np.ndarray   # (B, T, A)
    valid: np.ndarray      # (B, T)
    lengths: np.ndarray    # (B,)
    ended: np.ndarray      # (B,)


def make_batch(fragments, seq_length, num_actions):
    B, T, A = len(fragments), seq_length, num_actions
    obs = np.zeros((B, T + 1), dtype=np.int64)
    actions = np.zeros((B, T), dtype=np.int64)
    rewards = np.zeros((B, T))
    discounts = np.zeros((B, T))
    behavior = np.full((B, T, A), 1.0 / A)
    valid = np.zeros((B, T), dtype=bool)
    lengths = np.zeros(B, dtype=np.int64)
    ended = np.zeros(B, dtype=bool)
    for b, f in enumerate(fragments):
        n = f.size
        obs[b, :n + 1] = f.obs
        obs[b, n + 1:] = f.obs[-1]
        actions[b, :n] = f.actions
        rewards[b, :n] = f.rewards
        discounts[b, :n] = f.discounts
        behavior[b, :n] = f.behavior
        valid[b, :n] = True
        lengths[b] = n
        ended[b] = f.ended
    return Batch(obs, actions, rewards, discounts, behavior, valid, lengths, ended)


class Prepared(NamedTuple):
    """Target-network quantities for one batch, constant w.r.t. online params."""

    obs: np.ndarray            # (P,) observation at each valid position
    actions: np.ndarray        # (P,)
    behavior: np.ndarray       # (P, A)
    prior_probs: np.ndarray    # (P, A) prior used by CMPO/KL
    advantages: np.ndarray     # (P, A) normalized q_prior - v_prior
    pg_advantages: np.ndarray  # (P,) normalized G - v_prior
    value_targets: np.ndarray  # (P,)
    kl_actions: Optional[np.ndarray]
    unroll_actions: np.ndarray     # (P, K)
    model_policy_targets: Optional[np.ndarray]  # (P, K, A)
    model_policy_mask: np.ndarray
    reward_targets: np.ndarray
    reward_mask: np.ndarray
    model_value_targets: np.ndarray
    model_value_mask: np.ndarray
    tv_max: float
    adv_std: float


class Learner:
    """Holds the network definition and configuration; all state is explicit."""

    def __init__(self, config, mdp):
        self.config = config
        self.mdp = mdp
        self.net = build_network(mdp.num_obs, mdp.num_actions, config.net_mode,
                                 config.hidden, config.model_hidden)

    def init_state(self):
        params = self.net.init_params(self.config.seed)
        cfg = self.config
        return LearnerState(params, params.copy(), AdvNormState(beta_var=cfg.beta_var, eps_var=cfg.eps_var),
                            OptimizerState.create(params, cfg))

    def prior_policy_table(self, target):
        return self.net.policy_table(target)

    # -- target-network side ----------------------------------------------------------

    def prepare(self, target, norm, batch, rng):
        """Returns, normalization and model targets; returns ``(Prepared, new_norm)``."""
        cfg, upd = self.config, self.config.update
        B, T = batch.actions.shape
        A = self.mdp.num_actions
        gamma = self.mdp.discount
        flat_obs = batch.obs.reshape(-1)
        out, cache = self.net.forward_with_cache(target, flat_obs)
        prior = softmax(out.policy_logits).reshape(B, T + 1, A)
        v_prior = out.value.reshape(B, T + 1)
        q_prior = one_step_q(target, cache.hidden, gamma).reshape(B, T + 1, A)
        valid = batch.valid
        mu_taken = np.take_along_axis(batch.behavior, batch.actions[..., None], -1)[..., 0]

        if cfg.return_estimator == "retrace":
            G = retrace_batch(q_prior, prior, batch.actions, batch.rewards, batch.discounts,
                              mu_taken, cfg.retrace_lambda, valid, cfg.retrace_samples, rng)
            value_tgt = G
        else:
            pi_taken = np.take_along_axis(prior[:, :T], batch.actions[..., None], -1)[..., 0]
            value_tgt, G = vtrace_batch(v_prior, pi_taken, batch.actions, batch.rewards,
                                        batch.discounts, mu_taken, cfg.vtrace_lambda, valid=valid)

        raw_adv = (G - v_prior[:, :T])[valid]
        norm = norm_update(norm, raw_adv)
        scale = upd.adv_scale / math.sqrt(norm.corrected_var + norm.eps_var)
        adv_all = (q_prior - v_prior[..., None]) * scale            # (B, T + 1, A)
        pg_adv = raw_adv * scale

        cmpo_prior = prior
        if upd.prior_mix:
            cmpo_prior = prior * (1 - PRIOR_MIX_UNIFORM) + PRIOR_MIX_UNIFORM / A
            mixed = (prior[:, :T] * (1 - PRIOR_MIX_UNIFORM - PRIOR_MIX_BEHAVIOR)
                     + PRIOR_MIX_UNIFORM / A + PRIOR_MIX_BEHAVIOR * batch.behavior)
            cmpo_prior = cmpo_prior.copy()
            cmpo_prior[:, :T] = np.where(valid[..., None], mixed, cmpo_prior[:, :T])

        bi, ti = np.nonzero(valid)
        P = bi.size
        K = cfg.unroll_steps
        kl_actions = None
        if upd.kl_samples is not None and upd.variant in ("muesli", "cmpo_indirect"):
            cum = np.cumsum(cmpo_prior[bi, ti], axis=1)
            u = rng.random((P, upd.kl_samples))
            kl_actions = np.minimum((u[..., None] >= cum[:, None, :]).sum(-1), A - 1)

        # model targets at s_{t+k}; pad K columns so indices past the fragment stay in range
        pad = K + 1
        acts_p = np.concatenate([batch.actions, np.zeros((B, pad), np.int64)], 1)
        rew_p = np.concatenate([batch.rewards, np.zeros((B, pad))], 1)
        vt_p = np.concatenate([value_tgt, np.zeros((B, pad))], 1)
        ks = np.arange(1, K + 1)
        i_idx = ti[:, None] + ks[None] - 1            # action/reward index
        j_idx = i_idx + 1                             # state index
        lengths = batch.lengths[bi][:, None]
        ended = batch.ended[bi][:, None]
        act_in = i_idx < lengths
        unroll_actions = np.where(act_in, acts_p[bi[:, None], i_idx], 0)
        reward_targets = np.where(act_in, rew_p[bi[:, None], i_idx], 0.0)
        reward_mask = act_in | ended
        state_in = j_idx < lengths
        model_value_targets = np.where(state_in, vt_p[bi[:, None], j_idx], 0.0)
        model_value_mask = state_in | ended
        policy_mask = state_in

        step_targets = model_policy_targets(cmpo_prior, adv_all, upd)
        m_targets = None
        if step_targets is not None:
            tp = np.concatenate([step_targets[:, :T], np.full((B, pad, A), 1.0 / A)], 1)
            m_targets = tp[bi[:, None], np.minimum(j_idx, T + pad - 1)]

        cmpo = cmpo_target(cmpo_prior[bi, ti], adv_all[bi, ti], upd.clip_c).probs
        tv = float(np.max(total_variation(cmpo, cmpo_prior[bi, ti]))) if P else 0.0
        prepared = Prepared(
            obs=batch.obs[bi, ti], actions=batch.actions[bi, ti], behavior=batch.behavior[bi, ti],
            prior_probs=cmpo_prior[bi, ti], advantages=adv_all[bi, ti], pg_advantages=pg_adv,
            value_targets=value_tgt[bi, ti], kl_actions=kl_actions, unroll_actions=unroll_actions,
            model_policy_targets=m_targets, model_policy_mask=policy_mask,
            reward_targets=reward_targets, reward_mask=reward_mask,
            model_value_targets=model_value_targets, model_value_mask=model_value_mask,
            tv_max=tv, adv_std=float(np.std(pg_adv)) if P else 0.0,
        )
        return prepared, norm

    # -- online-network side ----------------------------------------------------------

    def loss_and_grad(self, params, prep, is_weights=None):
        """Total loss and gradient w.r.t. the online params.

        ``is_weights`` overrides the clipped importance weights, which are
        otherwise computed from ``params`` and treated as constants.
        """
        cfg, upd = self.config, self.config.update
        out, cache = self.net.forward_with_cache(params, prep.obs)
        probs = softmax(out.policy_logits)
        if is_weights is None:
            is_weights = clipped_is_weights(probs, prep.behavior, prep.actions)
        pb = PolicyBatch(out.policy_logits, prep.prior_probs, prep.behavior, prep.actions,
                         prep.pg_advantages, prep.advantages, is_weights, prep.kl_actions)
        pol = policy_loss(pb, upd)
        unrolled, ucache = unroll(params, cache.hidden, prep.unroll_actions)
        use_m = prep.model_policy_targets is not None
        m_targets = prep.model_policy_targets if use_m else np.zeros_like(unrolled.pi_logits)
        m_mask = prep.model_policy_mask if use_m else np.zeros_like(prep.model_policy_mask)
        ml = model_losses(unrolled, m_targets, m_mask, prep.reward_targets, prep.reward_mask,
                          prep.model_value_targets, prep.model_value_mask,
                          base_value=out.value, base_value_target=prep.value_targets)
        wp, wv, wr = upd.policy_weight, cfg.value_weight, cfg.reward_weight
        total = wp * (pol.loss + ml.policy) + wv * ml.value + wr * ml.reward
        grad = params.zeros_like()
        d_h = unroll_backward(params, ucache, wr * ml.d_r, wv * ml.d_v, wp * ml.d_logits, grad)
        self.net.backward(params, cache, wp * pol.d_logits, wv * ml.d_base_value, d_h, grad)
        parts = {"loss_total": total, "loss_policy": pol.loss, "loss_model_policy": ml.policy,
                 "loss_value": ml.value, "loss_reward": ml.reward}
        return total, grad, parts

    def train_step(self, state, batch, rng):
        """One learner update; returns ``(new_state, metrics)``."""
        prep, norm = self.prepare(state.target, state.norm, batch, rng)
        total, grad, parts = self.loss_and_grad(state.params, prep)
        if not (math.isfinite(total) and grad.is_finite()):
            raise TrainingDivergedError(
                f"non-finite loss at step {state.step + 1}: {parts}, "
                f"normalizer var={norm.var:.3g}, max|adv|={np.max(np.abs(prep.advantages)):.3g}"
            )
        params, opt, _ = clipped_adam_step(state.params, grad, state.opt)
        target = ema_update(state.target, params, self.config.alpha_target)
        new = LearnerState(params, target, norm, opt, state.step + 1,
                           max(state.tv_max_run, prep.tv_max))
        metrics = dict(parts, lr=opt.lr_at(opt.step), adv_std=prep.adv_std, tv_batch=prep.tv_max)
        return new, metrics

    # -- acting -----------------------------------------------------------------------

    def act_and_store(self, target, queue, buffer, rng, min_fragments):
        """Roll out ``pi_prior`` episodes until ``queue`` holds ``min_fragments``."""
        table = self.prior_policy_table(target)
        episodes = 0
        while len(queue) < min_fragments:
            traj = sample_episode(self.mdp, table, rng, self.config.max_episode_length)
            episodes += 1
            for frag in split_trajectory(traj, self.config.seq_length):
                queue.append(frag)
                buffer.add(frag)
        return episodes

    def assemble_batch(self, queue, buffer, rng):
        cfg = self.config
        online = [queue.popleft() for _ in range(cfg.num_online)]
        replay = buffer.sample(cfg.num_replay, rng)
        return make_batch(online + replay, cfg.seq_length, self.mdp.num_actions)

    # -- evaluation -------------------------------------------------------------------

    def observation_tv(self, state):
        """Max over observations of ``TV(pi_cmpo, pi_prior)`` at the current normalizer."""
        obs = np.arange(self.mdp.num_obs)
        out, cache = self.net.forward_with_cache(state.target, obs)
        prior = softmax(out.policy_logits)
        if state.norm.beta_product >= 1.0:
            return 0.0
        scale = self.config.update.adv_scale / math.sqrt(state.norm.corrected_var + state.norm.eps_var)
        adv = (one_step_q(state.target, cache.hidden, self.mdp.discount) - out.value[:, None]) * scale
        cmpo = cmpo_target(prior, adv, self.config.update.clip_c).probs
        return float(np.max(total_variation(cmpo, prior)))

    def evaluate_row(self, state, metrics):
        online = self.net.policy_table(state.params)
        prior = self.net.policy_table(state.target)
        row = {
            "schema": SCHEMA_VERSION,
            "step": state.step,
            "lr": metrics.get("lr", state.opt.lr_at(state.opt.step)),
            "J": evaluate(self.mdp, online).J,
            "J_prior": evaluate(self.mdp, prior).J,
            "tv_max": self.observation_tv(state),
            "tv_max_run": state.tv_max_run,
            "tv_bound": max_tv(self.config.update.clip_c),
        }
        for col in ("loss_total", "loss_policy", "loss_model_policy", "loss_value",
                    "loss_reward", "adv_std"):
            row[col] = metrics.get(col, float("nan"))
        return row


class RunResult(NamedTuple):
    history: list
    state: LearnerState
    learner: Learner
    rng: np.random.Generator

    @property
    def policy(self):
        return self.learner.net.policy_table(self.state.params)

    @property
    def prior_policy(self):
        return self.learner.net.policy_table(self.state.target)


class Runner:
    """Owns the mutable run state (learner state, queue, buffer, generator)."""

    def __init__(self, config, mdp):
        self.learner = Learner(config, mdp)
        self.config = config
        self.state = self.learner.init_state()
        self.rng = np.random.default_rng(config.seed)
        self.queue = deque()
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.history = []

    def step(self):
        cfg = self.config
        self.learner.act_and_store(self.state.target, self.queue, self.buffer, self.rng, cfg.num_online)
        batch = self.learner.assemble_batch(self.queue, self.buffer, self.rng)
        self.state, metrics = self.learner.train_step(self.state, batch, self.rng)
        if self.state.step % cfg.eval_interval == 0 or self.state.step == cfg.total_steps:
            row = self.learner.evaluate_row(self.state, metrics)
            self.history.append(row)
            log.debug("step %d J=%.4f tv=%.4f", row["step"], row["J"], row["tv_max"])
        return metrics

    def run(self, num_steps=None, callback=None):
        end = self.config.total_steps if num_steps is None else min(
            self.state.step + num_steps, self.config.total_steps)
        while self.state.step < end:
            self.step()
            if callback is not None:
                callback(self)
        return RunResult(self.history, self.state, self.learner, self.rng)

    # -- checkpoints ------------------------------------------------------------------

    def save(self, path):
        s = self.state
        meta = {
            "config": self.config.to_dict(),
            "step": s.step,
            "tv_max_run": s.tv_max_run,
            "norm": asdict(s.norm),
            "opt_step": s.opt.step,
            "rng": self.rng.bit_generator.state,
            "queue": [_frag_to_json(f) for f in self.queue],
            "buffer": [_frag_to_json(f) for f in self.buffer.items()],
            "history": self.history,
        }
        blocks = {"params": s.params, "target": s.target,
                  "adam_m": s.params.with_data(s.opt.m), "adam_v": s.params.with_data(s.opt.v)}
        save_params(path, blocks, meta)

    @classmethod
    def load(cls, path, mdp):
        blocks, meta = load_params(path)
        config = TrainConfig.from_dict(meta["config"])
        runner = cls(config, mdp)
        opt = OptimizerState.create(blocks["params"], config)
        opt = replace(opt, m=blocks["adam_m"].data.copy(), v=blocks["adam_v"].data.copy(),
                      step=meta["opt_step"])
        runner.state = LearnerState(blocks["params"], blocks["target"], AdvNormState(**meta["norm"]),
                                    opt, meta["step"], meta["tv_max_run"])
        runner.rng.bit_generator.state = meta["rng"]
        runner.queue = deque(_frag_from_json(f) for f in meta["queue"])
        for f in meta["buffer"]:
            runner.buffer.add(_frag_from_json(f))
        runner.history = list(meta["history"])
        return runner


def _frag_to_json(f):
    return {"obs": f.obs.tolist(), "states": f.states.tolist(), "actions": f.actions.tolist(),
            "rewards": f.rewards.tolist(), "discounts": f.discounts.tolist(),
            "behavior": f.behavior.tolist(), "ended": f.ended}


def _frag_from_json(d):
    A = len(d["behavior"][0]) if d["behavior"] else 0
    return Fragment(np.asarray(d["obs"], np.int64), np.asarray(d["states"], np.int64),
                    np.asarray(d["actions"], np.int64), np.asarray(d["rewards"], float),
                    np.asarray(d["discounts"], float),
                    np.asarray(d["behavior"], float).reshape(-1, A), bool(d["ended"]))


def run(config, mdp, callback=None):
    """Train from scratch; deterministic given ``config.seed``."""
    return Runner(config, mdp).run(callback=callback)


def write_metrics_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in METRIC_COLUMNS})


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def summary(result, mdp):
    """Final-run summary used by the CLI results file."""
    policy = result.policy
    return {
        "final_J": evaluate(mdp, policy).J,
        "final_J_prior": evaluate(mdp, result.prior_policy).J,
        "policy": policy.tolist(),
        "prior_policy": result.prior_policy.tolist(),
        "greedy": np.argmax(policy, axis=1).tolist(),
        "tv_max": max((r["tv_max"] for r in result.history), default=0.0),
        "tv_max_run": result.state.tv_max_run,
        "tv_bound": max_tv(result.learner.config.update.clip_c),
        "steps": result.state.step,
    }


def dumps_summary(doc):
    return json.dumps(doc, indent=2, sort_keys=True)
