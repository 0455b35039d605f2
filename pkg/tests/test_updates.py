import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import (TREND_ADV, TREND_LOGITS, TREND_PRIOR, enumerated_sampled_gradient,
                     exact_kl_gradient)
from muesli_lab._validation import ValidationError
from muesli_lab.approx import softmax
from muesli_lab.targets import cmpo_target, mpo_target
from muesli_lab.updates import (LOSSES, UpdateConfig, clipped_is_weights, cmpo_kl_term,
                                model_policy_targets, policy_loss, ppo_surrogate)
from muesli_lab.verify import policy_loss_fd, random_policy_batch


@pytest.mark.parametrize("variant", sorted(LOSSES))
def test_loss_gradients_fd_20_points(variant):
    worst = max(policy_loss_fd(variant, seed).max_rel_error for seed in range(20))
    assert worst < 1e-4


@pytest.mark.parametrize("variant", ["muesli", "cmpo_indirect"])
def test_exact_kl_gradients_fd(variant):
    worst = max(policy_loss_fd(variant, seed, kl_samples=None).max_rel_error for seed in range(20))
    assert worst < 1e-4


def test_unknown_variant_lists_valid_ones():
    with pytest.raises(ValidationError, match="muesli, pg, pg_trpo"):
        UpdateConfig(variant="a2c")


def test_entropy_defaults():
    assert UpdateConfig(variant="pg").entropy == 0.003
    assert UpdateConfig(variant="pg_trpo").entropy == 0.0003
    assert UpdateConfig(variant="ppo").entropy == 0.0003
    assert UpdateConfig(variant="muesli").entropy == 0.0
    assert UpdateConfig(variant="pg", entropy_weight=0.1).entropy == 0.1


def test_cmpo_indirect_zero_at_target(rng):
    b = random_policy_batch(rng, kl_samples=0)
    target = cmpo_target(b.prior_probs, b.advantages).probs
    out = policy_loss(b._replace(logits=np.log(target)), UpdateConfig("cmpo_indirect", kl_samples=None))
    assert out.loss == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(out.d_logits, 0.0, atol=1e-12)


def test_mpo_indirect_zero_at_target(rng):
    b = random_policy_batch(rng, kl_samples=0)
    target = mpo_target(b.prior_probs, b.advantages)
    out = policy_loss(b._replace(logits=np.log(target)), UpdateConfig("mpo_indirect"))
    assert out.loss == pytest.approx(0.0, abs=1e-12)


def test_mpo_direct_kl_gradient_vanishes_at_prior(rng):
    b = random_policy_batch(rng, kl_samples=0)
    b = b._replace(logits=np.log(b.prior_probs), pg_advantages=np.zeros(len(b.actions)))
    out = policy_loss(b, UpdateConfig("mpo_direct"))
    assert out.parts["reverse_kl"] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(out.d_logits, 0.0, atol=1e-12)


def test_muesli_kl_term_equals_cmpo_indirect(rng):
    b = random_policy_batch(rng, kl_samples=0)
    m = policy_loss(b._replace(pg_advantages=np.zeros(len(b.actions))),
                    UpdateConfig("muesli", kl_samples=None))
    c = policy_loss(b, UpdateConfig("cmpo_indirect", kl_samples=None))
    np.testing.assert_allclose(m.d_logits, c.d_logits, atol=1e-15)
    assert m.loss == pytest.approx(c.loss)


def test_pg_gradient_matches_ratio_form_when_unclipped(rng):
    """Unclipped weights: grad of -w adv log pi equals grad of -(pi/mu) adv."""
    b = random_policy_batch(rng, kl_samples=0)
    p = softmax(b.logits)
    idx = np.arange(len(b.actions))
    mu = p[idx, b.actions] * 1.5  # ratio 2/3 < 1, so no clipping
    behavior = b.behavior_probs.copy()
    behavior[idx, b.actions] = mu
    w = clipped_is_weights(p, behavior, b.actions)
    np.testing.assert_allclose(w, 2 / 3)
    out = policy_loss(b._replace(behavior_probs=behavior, is_weights=w), UpdateConfig("pg", entropy_weight=0.0))
    onehot = np.eye(p.shape[1])[b.actions]
    ref = -(b.pg_advantages * p[idx, b.actions] / mu)[:, None] * (onehot - p) / len(idx)
    np.testing.assert_allclose(out.d_logits, ref, atol=1e-14)


def test_ppo_clipping():
    adv = np.array([1.0, 1.0, -1.0, -1.0])
    ratio = np.array([2.0, 0.3, 2.0, 0.3])
    np.testing.assert_allclose(ppo_surrogate(ratio, adv, 0.5), [1.5, 0.3, -2.0, -0.5])


def test_pg_trpo_penalty_zero_when_policy_equals_behavior(rng):
    b = random_policy_batch(rng, kl_samples=0)
    b = b._replace(logits=np.log(b.behavior_probs))
    assert policy_loss(b, UpdateConfig("pg_trpo")).parts["trpo_kl"] == pytest.approx(0.0, abs=1e-12)


def test_model_policy_targets_selection(rng):
    b = random_policy_batch(rng, kl_samples=0)
    assert model_policy_targets(b.prior_probs, b.advantages, UpdateConfig("pg")) is None
    assert model_policy_targets(b.prior_probs, b.advantages,
                                UpdateConfig("muesli", model_policy_loss=False)) is None
    np.testing.assert_allclose(model_policy_targets(b.prior_probs, b.advantages, UpdateConfig()),
                               cmpo_target(b.prior_probs, b.advantages).probs)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_sampled_kl_with_exact_z_matches_enumeration(n):
    got = enumerated_sampled_gradient(TREND_LOGITS, TREND_PRIOR, TREND_ADV, n, exact_z=True,
                                      ordered=True)
    np.testing.assert_allclose(got, exact_kl_gradient(TREND_LOGITS, TREND_PRIOR, TREND_ADV),
                               atol=1e-9)


def test_multiset_enumeration_equals_ordered():
    a = enumerated_sampled_gradient(TREND_LOGITS, TREND_PRIOR, TREND_ADV, 3, False, ordered=True)
    b = enumerated_sampled_gradient(TREND_LOGITS, TREND_PRIOR, TREND_ADV, 3, False)
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_leave_one_out_bias_shrinks_with_samples():
    exact = exact_kl_gradient(TREND_LOGITS, TREND_PRIOR, TREND_ADV)
    bias = [np.linalg.norm(enumerated_sampled_gradient(TREND_LOGITS, TREND_PRIOR, TREND_ADV, n, False)
                           - exact) for n in (1, 2, 4, 16)]
    assert all(a > b for a, b in zip(bias, bias[1:])), bias


def test_sampled_kl_monte_carlo_agrees_with_exact(rng):
    A, S = 4, 16
    prior, adv, logits = TREND_PRIOR, TREND_ADV, TREND_LOGITS
    from oracles import single_row_batch
    cfg = UpdateConfig("cmpo_indirect", kl_samples=S)
    grads = []
    for _ in range(4000):
        acts = rng.choice(A, size=S, p=prior)
        grads.append(cmpo_kl_term(single_row_batch(logits, prior, adv, acts), cfg, exact_z=True)[1][0])
    grads = np.array(grads)
    se = grads.std(axis=0, ddof=1) / np.sqrt(len(grads))
    assert np.all(np.abs(grads.mean(0) - exact_kl_gradient(logits, prior, adv)) < 4 * se + 1e-12)


@given(st.integers(0, 10_000))
def test_losses_finite_on_random_batches(seed):
    b = random_policy_batch(np.random.default_rng(seed))
    for v in LOSSES:
        out = policy_loss(b, UpdateConfig(v))
        assert np.isfinite(out.loss) and np.all(np.isfinite(out.d_logits))
