"""Verifier suites behind ``muesli-lab verify``.

Each suite returns a list of :class:`Check` rows; a suite passes when every
row does.
"""

from typing import NamedTuple

import numpy as np

from .approx import ParamVector, fd_check
from .env import random_mdp
from .oracle import evaluate, performance_difference, trpo_lower_bound
from .targets import ClipConfig, verify_theorem
from .trainer import Runner, TrainConfig
from .updates import LOSSES, PolicyBatch, UpdateConfig, policy_loss

THEOREM_GRID = (0.1, 0.5, 1.0, 2.0)


class Check(NamedTuple):
    name: str
    value: float
    reference: float
    error: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.error <= self.tolerance)


def all_passed(checks):
    return all(c.passed for c in checks)


def format_table(checks):
    head = f"{'check':<34} {'value':>14} {'reference':>14} {'error':>11} {'tol':>8}  result"
    lines = [head, "-" * len(head)]
    for c in checks:
        lines.append(f"{c.name:<34} {c.value:>14.6f} {c.reference:>14.6f} {c.error:>11.2e} "
                     f"{c.tolerance:>8.0e}  {'PASS' if c.passed else 'FAIL'}")
    return "\n".join(lines)


def theorem_checks(cs=THEOREM_GRID):
    out = []
    for c in cs:
        r = verify_theorem(ClipConfig(c), check=False)
        out.append(Check(f"max TV, c={c:g}", r.numeric_max, r.analytic_max,
                         abs(r.numeric_max - r.analytic_max), 1e-6))
        out.append(Check(f"argmax p, c={c:g}", r.argmax_p, r.analytic_argmax_p,
                         abs(r.argmax_p - r.analytic_argmax_p), 1e-5))
    return out


def _random_instance(seed, discount=0.9, max_states=8):
    rng = np.random.default_rng(seed)
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, 5))
    mdp = random_mdp(S, A, seed=seed, discount=discount, terminal=bool(rng.integers(0, 2)))
    pi_prior = rng.dirichlet(np.ones(A), size=S)
    pi_new = rng.dirichlet(np.ones(A), size=S)
    return mdp, pi_new, pi_prior


def lemma_checks(seeds=100, tolerance=1e-8):
    """Performance-difference identity on seeded random MDPs."""
    out = []
    for seed in range(seeds):
        mdp, pi_new, pi_prior = _random_instance(seed)
        lhs = evaluate(mdp, pi_new, per_state=True).J - evaluate(mdp, pi_prior, per_state=True).J
        rhs = performance_difference(mdp, pi_new, pi_prior, per_state=True)
        out.append(Check(f"lemma seed={seed}", rhs, lhs, abs(rhs - lhs), tolerance))
    return out


def bound_checks(seeds=100):
    """TRPO lower bound; error is the amount of violation (0 when satisfied)."""
    out = []
    for seed in range(seeds):
        mdp, pi_new, pi_prior = _random_instance(seed)
        # blend towards the prior so both loose and near-tight regimes are covered
        mix = np.random.default_rng(seed + 10_000).uniform(0.0, 1.0)
        pi_new = mix * pi_new + (1 - mix) * pi_prior
        r = trpo_lower_bound(mdp, pi_new, pi_prior, per_state=True, check=False)
        out.append(Check(f"bound seed={seed}", r.actual_difference, r.bound,
                         max(0.0, r.bound - r.actual_difference), 1e-8))
    return out


def random_policy_batch(rng, n=6, num_actions=4, kl_samples=16):
    A = num_actions
    logits = rng.normal(size=(n, A))
    prior = rng.dirichlet(np.ones(A), size=n)
    behavior = rng.dirichlet(np.ones(A), size=n) * 0.9 + 0.1 / A
    actions = rng.integers(0, A, size=n)
    kl_actions = None
    if kl_samples:
        cum = np.cumsum(prior, axis=1)
        u = rng.random((n, kl_samples))
        kl_actions = np.minimum((u[..., None] >= cum[:, None, :]).sum(-1), A - 1)
    return PolicyBatch(
        logits=logits, prior_probs=prior, behavior_probs=behavior, actions=actions,
        pg_advantages=rng.normal(size=n), advantages=rng.normal(size=(n, A)) * 1.5,
        is_weights=rng.uniform(0.2, 1.0, size=n), kl_actions=kl_actions,
    )


def policy_loss_fd(variant, seed, tolerance=1e-4, **overrides):
    """FD check of one policy loss w.r.t. its logits at a random point."""
    rng = np.random.default_rng(seed)
    config = UpdateConfig(variant=variant, **overrides)
    batch = random_policy_batch(rng, kl_samples=config.kl_samples or 0)
    layout = [("logits", batch.logits.shape)]
    params = ParamVector(layout, batch.logits.ravel())

    def loss_fn(p):
        out = policy_loss(batch._replace(logits=p["logits"].copy()), config)
        return out.loss, out.d_logits.ravel()

    return fd_check(params, loss_fn, tolerance=tolerance)


def learner_fd(seed, variant="muesli", net_mode="mlp", unroll_steps=5, model_policy_loss=True,
               tolerance=1e-4, num_coords=None):
    """FD check of the full learner loss (policy + model + value + reward).

    Exercises the network torso, the model unroll and every loss head at once.
    Importance weights are frozen at the base point as in training.
    """
    rng = np.random.default_rng(seed)
    mdp = random_mdp(5, 3, seed=seed, discount=0.9)
    cfg = TrainConfig(batch_size=6, seq_length=4, total_steps=10, seed=seed, net_mode=net_mode,
                      hidden=5, model_hidden=4, unroll_steps=unroll_steps,
                      update=UpdateConfig(variant=variant, model_policy_loss=model_policy_loss))
    runner = Runner(cfg, mdp)
    learner = runner.learner
    state = runner.state
    state.target.data[:] = state.target.data + rng.normal(scale=0.5, size=state.target.size)
    params = state.params.with_data(state.target.data + rng.normal(scale=0.3, size=state.params.size))
    learner.act_and_store(state.target, runner.queue, runner.buffer, runner.rng, cfg.num_online)
    batch = learner.assemble_batch(runner.queue, runner.buffer, runner.rng)
    prep, _ = learner.prepare(state.target, state.norm, batch, runner.rng)
    from .approx import softmax
    from .updates import clipped_is_weights
    base_probs = softmax(learner.net.forward(params, prep.obs).policy_logits)
    w = clipped_is_weights(base_probs, prep.behavior, prep.actions)

    def loss_fn(p):
        total, grad, _ = learner.loss_and_grad(p, prep, is_weights=w)
        return total, grad

    idx = None
    if num_coords is not None and num_coords < params.size:
        idx = np.sort(rng.choice(params.size, size=num_coords, replace=False))
    return fd_check(params, loss_fn, tolerance=tolerance, indices=idx)


def gradient_checks(points=20, tolerance=1e-4):
    out = []
    cases = [(v, {}) for v in LOSSES] + [("muesli", {"kl_samples": None}),
                                         ("cmpo_indirect", {"kl_samples": None})]
    for variant, extra in cases:
        worst = max(policy_loss_fd(variant, 1000 + i, tolerance, **extra).max_rel_error
                    for i in range(points))
        label = variant + (" (exact KL)" if extra else "")
        out.append(Check(f"fd {label}", worst, 0.0, worst, tolerance))
    for mode, K, mpl in (("mlp", 5, True), ("tabular", 5, True), ("mlp", 1, True), ("mlp", 5, False)):
        worst = max(learner_fd(2000 + i, net_mode=mode, unroll_steps=K, model_policy_loss=mpl,
                               tolerance=tolerance).max_rel_error for i in range(points))
        out.append(Check(f"fd learner {mode} K={K}{'' if mpl else ' no-pi'}", worst, 0.0, worst,
                         tolerance))
    return out


SUITES = {
    "theorem": theorem_checks,
    "lemma": lemma_checks,
    "bound": bound_checks,
    "gradients": gradient_checks,
}
