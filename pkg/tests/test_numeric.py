"""Numeric building blocks: rng, activations, softmax, Adam, dropout, checker."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgrc.errors import ConfigError, GradientCheckError, ShapeError
from hgrc.numeric import (AdamState, Rng, adam_step, dropout_mask, finite_diff_check,
                          glorot_init, matmul, relu, relu_grad, sigmoid, sigmoid_grad,
                          softmax, tanh_grad)

# ---------------------------------------------------------------------- rng


def test_rng_same_seed_same_stream():
    a = Rng(42).normal(size=100)
    b = Rng(42).normal(size=100)
    assert np.array_equal(a, b)


def test_rng_different_seeds_differ():
    assert not np.array_equal(Rng(1).random(50), Rng(2).random(50))


def test_rng_split_deterministic_and_independent():
    kids_a = Rng(7).split(3)
    kids_b = Rng(7).split(3)
    for ka, kb in zip(kids_a, kids_b):
        assert np.array_equal(ka.random(20), kb.random(20))
    draws = [k.random(20) for k in Rng(7).split(3)]
    assert not np.array_equal(draws[0], draws[1])
    assert not np.array_equal(draws[1], draws[2])


def test_rng_split_does_not_disturb_parent():
    r = Rng(5)
    before = Rng(5).random(10)
    r.split(4)
    assert np.array_equal(r.random(10), before)


def test_rng_permutation_is_a_permutation():
    p = Rng(0).permutation(100)
    assert sorted(p.tolist()) == list(range(100))


# ------------------------------------------------------------------- matmul


def test_matmul_matches_operator():
    a = Rng(0).normal(size=(4, 5))
    b = Rng(1).normal(size=(5, 3))
    assert np.array_equal(matmul(a, b), a @ b)


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((4, 2)))
    with pytest.raises(ShapeError):
        matmul(np.ones(3), np.ones((3, 2)))


# -------------------------------------------------------------- activations


def test_relu_values_and_subgradient():
    x = np.array([-2.0, -0.0, 0.0, 3.0])
    assert np.array_equal(relu(x), [0.0, 0.0, 0.0, 3.0])
    # subgradient at the kink is 0
    assert np.array_equal(relu_grad(x), [0.0, 0.0, 0.0, 1.0])


def test_sigmoid_matches_naive_form():
    x = np.linspace(-30, 30, 101)
    assert np.allclose(sigmoid(x), 1.0 / (1.0 + np.exp(-x)), rtol=0, atol=1e-15)


def test_sigmoid_extreme_inputs_do_not_overflow():
    assert sigmoid(np.array([-1e4]))[0] == 0.0
    assert sigmoid(np.array([1e4]))[0] == 1.0
    assert np.all(np.isfinite(sigmoid(np.array([-745.0, 745.0]))))


def test_sigmoid_symmetry():
    x = np.linspace(-20, 20, 41)
    assert np.allclose(sigmoid(-x), 1.0 - sigmoid(x), rtol=0, atol=1e-15)


def test_activation_grads_match_finite_differences():
    x = Rng(3).normal(size=17)
    h = 1e-6
    for fn, grad in ((sigmoid, sigmoid_grad), (np.tanh, tanh_grad)):
        num = (fn(x + h) - fn(x - h)) / (2 * h)
        assert np.allclose(grad(x), num, rtol=0, atol=1e-9)


def test_unknown_activation_rejected():
    from hgrc.numeric import activation, activation_grad
    with pytest.raises(ConfigError):
        activation(np.ones(3), "gelu")
    with pytest.raises(ConfigError):
        activation_grad(np.ones(3), "gelu")


# ------------------------------------------------------------------ softmax


def test_softmax_known_values():
    out = softmax(np.array([[0.0, 0.0]]))
    assert np.allclose(out, [[0.5, 0.5]], rtol=0, atol=1e-15)
    out = softmax(np.array([[math.log(1.0), math.log(3.0)]]))
    assert np.allclose(out, [[0.25, 0.75]], rtol=0, atol=1e-15)


def test_softmax_handles_huge_logits():
    with np.errstate(over="ignore"):  # -1e308 - 1e308 legitimately hits -inf
        out = softmax(np.array([[1e308, 0.0, -1e308]]))
    assert np.allclose(out, [[1.0, 0.0, 0.0]], rtol=0, atol=1e-15)


def test_softmax_empty_axis_rejected():
    with pytest.raises(ShapeError):
        softmax(np.zeros((3, 0)))


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.integers(1, 6))
@settings(max_examples=50, deadline=None)
def test_softmax_rows_are_distributions(seed, n, k):
    x = Rng(seed).normal(scale=5.0, size=(n, k))
    out = softmax(x, axis=1)
    assert np.all(out > 0.0)
    assert np.allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    # shift invariance along the softmax axis
    shifted = softmax(x + Rng(seed + 1).normal(size=(n, 1)), axis=1)
    assert np.allclose(out, shifted, rtol=0, atol=1e-12)


# --------------------------------------------------------------------- adam


def test_adam_two_steps_frozen_values():
    # derived by hand from the bias-corrected update, lr 0.01,
    # gradient sequence [0.5, -0.25] on a scalar starting at 1.0
    p = np.array([1.0])
    state = AdamState.zeros((1,), learning_rate=0.01)
    p, state = adam_step(p, np.array([0.5]), state)
    assert np.allclose(p, [0.9900000002], rtol=0, atol=1e-12)
    p, state = adam_step(p, np.array([-0.25]), state)
    assert np.allclose(p, [0.9873366298707846], rtol=0, atol=1e-12)
    assert state.step == 2


def test_adam_first_step_is_signed_learning_rate():
    # bias correction makes m_hat = g and v_hat = g^2 on step one
    g = np.array([3.0, -0.2, 1e-3])
    p = np.zeros(3)
    state = AdamState.zeros((3,), learning_rate=0.05)
    p, _ = adam_step(p, g, state)
    expected = -0.05 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p, expected, rtol=0, atol=1e-12)


def test_adam_descends_a_quadratic():
    p = np.array([5.0])
    state = AdamState.zeros((1,), learning_rate=0.1)
    for _ in range(300):
        p, state = adam_step(p, 2.0 * p, state)
    assert abs(p[0]) < 0.05


def test_adam_shape_mismatch_rejected():
    state = AdamState.zeros((2,))
    with pytest.raises(ShapeError):
        adam_step(np.zeros(3), np.zeros(3), state)
    with pytest.raises(ShapeError):
        adam_step(np.zeros(2), np.zeros(3), state)


def test_adam_state_is_not_mutated():
    state = AdamState.zeros((2,))
    adam_step(np.ones(2), np.ones(2), state)
    assert state.step == 0
    assert np.array_equal(state.first_moment, np.zeros(2))


# ------------------------------------------------------------------ dropout


def test_dropout_mask_values_and_mean():
    rate = 0.2
    mask = dropout_mask((200, 50), rate, Rng(11))
    assert set(np.unique(mask)).issubset({0.0, 1.0 / (1.0 - rate)})
    # inverted dropout keeps the expectation at 1
    assert abs(mask.mean() - 1.0) < 0.02


def test_dropout_mask_rate_zero_is_identity():
    assert np.array_equal(dropout_mask((3, 4), 0.0, Rng(0)), np.ones((3, 4)))


def test_dropout_mask_invalid_rate():
    with pytest.raises(ConfigError):
        dropout_mask((2,), 1.0, Rng(0))
    with pytest.raises(ConfigError):
        dropout_mask((2,), -0.1, Rng(0))


def test_dropout_mask_deterministic():
    assert np.array_equal(dropout_mask((8, 8), 0.5, Rng(3)),
                          dropout_mask((8, 8), 0.5, Rng(3)))


# --------------------------------------------------------------------- init


def test_glorot_bounds_and_shape():
    fan_in, fan_out = 30, 50
    w = glorot_init(fan_in, fan_out, Rng(1))
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    assert w.shape == (fan_in, fan_out)
    assert np.all(np.abs(w) <= limit)
    assert w.std() > 0.1 * limit


def test_glorot_rejects_bad_dims():
    with pytest.raises(ConfigError):
        glorot_init(0, 3, Rng(0))


# ----------------------------------------------------------------- fd check


def test_finite_diff_check_quadratic_is_tight():
    params = {"p": Rng(0).normal(size=(4, 3))}

    def loss(ps):
        return float((ps["p"] ** 2).sum())

    err = finite_diff_check(loss, params, {"p": 2.0 * params["p"]})
    assert err < 1e-9


def test_finite_diff_check_catches_wrong_gradient():
    params = {"p": np.array([1.0, 2.0])}

    def loss(ps):
        return float((ps["p"] ** 2).sum())

    err = finite_diff_check(loss, params, {"p": 3.0 * params["p"]})
    assert err > 0.3


def test_finite_diff_check_restores_parameters():
    params = {"p": np.array([1.0, -2.0, 3.0])}
    snapshot = params["p"].copy()
    finite_diff_check(lambda ps: float((ps["p"] ** 2).sum()),
                      params, {"p": 2.0 * params["p"]})
    assert np.array_equal(params["p"], snapshot)


def test_finite_diff_check_nonfinite_loss_raises():
    params = {"p": np.array([0.0])}

    def loss(ps):
        # finite only at the unperturbed point, so every probe blows up
        return 0.0 if ps["p"][0] == 0.0 else math.inf

    with pytest.raises(GradientCheckError, match="non-finite loss"):
        finite_diff_check(loss, params, {"p": np.array([0.0])})


def test_finite_diff_check_validates_inputs():
    params = {"p": np.zeros(2)}
    with pytest.raises(ConfigError):
        finite_diff_check(lambda ps: 0.0, params, {"p": np.zeros(2)}, h=0.0)
    with pytest.raises(ShapeError):
        finite_diff_check(lambda ps: 0.0, params, {"p": np.zeros(3)})
