"""FFN ensemble head: members, attention gating, losses, backward."""

import math

import numpy as np
import pytest

from hgrc.errors import ConfigError, ShapeError
from hgrc.head import (EnsembleParams, attention_weights, ensemble_predict, ffn_forward,
                       head_backward, head_forward, init_ensemble_params, make_dropout_masks,
                       member_loss, per_patient_losses, total_loss)
from hgrc.numeric import Rng, finite_diff_check


def nudged_ensemble(seed, width=3, hidden=(4, 3), members=2, scale=0.3):
    """Ensemble away from the zero-output saddle so every gradient is live."""
    ens = init_ensemble_params(width, hidden, members, Rng(seed))
    nudge = Rng(seed + 1000)
    for arr in ensemble_arrays(ens).values():
        arr += nudge.normal(scale=scale, size=arr.shape)
    return ens


def ensemble_arrays(ens):
    out = {}
    for i, m in enumerate(ens.members):
        for name, arr in m.arrays().items():
            out[f"m{i}.{name}"] = arr
    out["w_beta"] = ens.w_beta
    out["b_beta"] = ens.b_beta
    return out


def grads_arrays(grads):
    return ensemble_arrays(grads)


# ------------------------------------------------------------------- init


def test_initial_member_probabilities_are_exactly_half():
    ens = init_ensemble_params(5, (4, 3), 3, Rng(0))
    x = Rng(1).normal(size=(7, 5))
    for m in ens.members:
        probs = ffn_forward(x, m)
        # zero output layer -> logits (0, 0) -> softmax (0.5, 0.5)
        assert np.array_equal(probs, np.full((7, 2), 0.5))


def test_initial_total_loss_is_ln_two():
    ens = init_ensemble_params(4, (3, 3), 2, Rng(2))
    x = Rng(3).normal(size=(6, 4))
    member_probs, beta, _ = head_forward(x, ens)
    labels = np.array([0, 1, 1, 0, 1, 0])
    for gating in ("per_patient", "scalar"):
        loss = total_loss(member_probs, beta, labels, gating)
        assert abs(loss - math.log(2.0)) < 1e-12


def test_init_validation_and_shapes():
    with pytest.raises(ConfigError):
        init_ensemble_params(3, (2, 2), 0, Rng(0))
    ens = init_ensemble_params(3, (5, 4), 2, Rng(0))
    assert ens.n_members == 2
    assert ens.w_beta.shape == (3, 2)
    m = ens.members[0]
    assert m.w1.shape == (3, 5) and m.w2.shape == (5, 4) and m.wy.shape == (4, 2)
    assert np.array_equal(m.wy, np.zeros((4, 2)))
    assert np.array_equal(m.by, np.zeros(2))


# ------------------------------------------------------------------ losses


def test_per_patient_losses_hand_values():
    probs = np.array([[0.8, 0.2], [0.1, 0.9]])
    labels = np.array([0, 1])
    losses = per_patient_losses(probs, labels)
    assert np.allclose(losses, [-math.log(0.8), -math.log(0.9)], rtol=0, atol=1e-15)
    assert np.isclose(member_loss(probs, labels),
                      (-math.log(0.8) - math.log(0.9)) / 2.0)


def test_per_patient_losses_clamp_keeps_loss_finite():
    probs = np.array([[1.0, 0.0], [0.0, 1.0]])
    labels = np.array([1, 0])  # both maximally wrong
    losses = per_patient_losses(probs, labels)
    assert np.all(np.isfinite(losses))
    # the death-probability clamp floor is hit exactly for the positive case;
    # the negative case goes through 1 - (1 - 1e-12) and picks up rounding
    assert losses[0] == -math.log(1e-12)
    assert np.allclose(losses, -math.log(1e-12), rtol=1e-5)


def test_label_validation():
    probs = np.full((2, 2), 0.5)
    with pytest.raises(ConfigError):
        per_patient_losses(probs, np.array([0, 2]))
    with pytest.raises(ShapeError):
        per_patient_losses(probs, np.zeros((2, 1)))


def test_total_loss_gating_modes_agree_for_constant_beta():
    member_probs = [np.array([[0.3, 0.7], [0.6, 0.4]]),
                    np.array([[0.5, 0.5], [0.2, 0.8]])]
    labels = np.array([1, 0])
    beta = np.full((2, 2), 0.5)
    a = total_loss(member_probs, beta, labels, "per_patient")
    b = total_loss(member_probs, beta, labels, "scalar")
    assert np.isclose(a, b, rtol=0, atol=1e-15)
    losses = np.stack([per_patient_losses(p, labels) for p in member_probs], axis=1)
    assert np.isclose(a, (0.5 * losses).sum(axis=1).mean())


def test_total_loss_validation():
    probs = [np.full((2, 2), 0.5)]
    with pytest.raises(ConfigError):
        total_loss(probs, np.ones((2, 1)), np.array([0, 1]), "mean-of-means")
    with pytest.raises(ShapeError):
        total_loss(probs, np.ones((2, 2)), np.array([0, 1]), "per_patient")


# -------------------------------------------------------------- prediction


def test_ensemble_predict_beta_is_convex_combination():
    member_probs = [np.array([[0.9, 0.1]]), np.array([[0.1, 0.9]])]
    beta = np.array([[0.25, 0.75]])
    out = ensemble_predict(member_probs, beta, "beta")
    assert np.allclose(out, [[0.25 * 0.9 + 0.75 * 0.1, 0.25 * 0.1 + 0.75 * 0.9]])
    assert np.allclose(out.sum(axis=1), 1.0)


def test_ensemble_predict_mean_ignores_beta():
    member_probs = [np.array([[0.9, 0.1]]), np.array([[0.1, 0.9]])]
    beta = np.array([[1.0, 0.0]])
    out = ensemble_predict(member_probs, beta, "mean")
    assert np.allclose(out, [[0.5, 0.5]])


def test_ensemble_predict_validation():
    probs = [np.full((2, 2), 0.5)]
    with pytest.raises(ConfigError):
        ensemble_predict(probs, np.ones((2, 1)), "vote")
    with pytest.raises(ShapeError):
        ensemble_predict(probs, np.ones((3, 1)), "beta")


def test_attention_weights_are_row_distributions():
    ens = nudged_ensemble(40)
    x = Rng(41).normal(size=(9, 3))
    beta = attention_weights(x, ens)
    assert beta.shape == (9, 2)
    assert np.all(beta > 0.0)
    assert np.allclose(beta.sum(axis=1), 1.0, rtol=0, atol=1e-12)


# ----------------------------------------------------------------- dropout


def test_dropout_masks_shapes_and_determinism():
    ens = init_ensemble_params(3, (4, 5), 2, Rng(0))
    masks = make_dropout_masks(6, ens, 0.5, Rng(7))
    assert len(masks) == 2
    assert masks[0][0].shape == (6, 4)
    assert masks[0][1].shape == (6, 5)
    again = make_dropout_masks(6, ens, 0.5, Rng(7))
    for (a1, a2), (b1, b2) in zip(masks, again):
        assert np.array_equal(a1, b1) and np.array_equal(a2, b2)
    values = np.unique(np.concatenate([m.ravel() for pair in masks for m in pair]))
    assert set(values).issubset({0.0, 2.0})


def test_dropout_masks_change_the_forward():
    ens = nudged_ensemble(50)
    x = Rng(51).normal(size=(8, 3))
    masks = make_dropout_masks(8, ens, 0.5, Rng(52))
    probs_m, _, _ = head_forward(x, ens, masks=masks)
    probs, _, _ = head_forward(x, ens)
    assert not all(np.array_equal(a, b) for a, b in zip(probs_m, probs))


# ---------------------------------------------------------------- backward


@pytest.mark.parametrize("gating", ["per_patient", "scalar"])
def test_head_backward_matches_finite_differences(gating):
    ens = nudged_ensemble(60)
    x = Rng(61).normal(size=(5, 3))
    labels = np.array([0, 1, 1, 0, 1])

    def loss(_arrays):
        # the checker perturbs the ensemble's arrays in place
        member_probs, beta, _ = head_forward(x, ens, kind="tanh")
        return float(total_loss(member_probs, beta, labels, gating))

    _, _, cache = head_forward(x, ens, kind="tanh")
    _, grads = head_backward(cache, labels, ens, gating)
    err = finite_diff_check(loss, ensemble_arrays(ens), grads_arrays(grads))
    assert err < 1e-6


def test_head_backward_input_gradient_matches_finite_differences():
    ens = nudged_ensemble(70)
    labels = np.array([1, 0, 1])
    x = Rng(71).normal(size=(3, 3))

    def loss(arrays):
        member_probs, beta, _ = head_forward(arrays["x"], ens, kind="tanh")
        return float(total_loss(member_probs, beta, labels, "per_patient"))

    _, _, cache = head_forward(x, ens, kind="tanh")
    d_x, _ = head_backward(cache, labels, ens, "per_patient")
    assert finite_diff_check(loss, {"x": x}, {"x": d_x}) < 1e-6


def test_head_backward_respects_dropout_masks():
    ens = nudged_ensemble(80)
    x = Rng(81).normal(size=(4, 3))
    labels = np.array([0, 1, 0, 1])
    masks = make_dropout_masks(4, ens, 0.5, Rng(82))

    def loss(_arrays):
        member_probs, beta, _ = head_forward(x, ens, kind="tanh", masks=masks)
        return float(total_loss(member_probs, beta, labels, "per_patient"))

    _, _, cache = head_forward(x, ens, kind="tanh", masks=masks)
    _, grads = head_backward(cache, labels, ens, "per_patient")
    err = finite_diff_check(loss, ensemble_arrays(ens), grads_arrays(grads))
    assert err < 1e-6
