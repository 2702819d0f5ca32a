"""Tensor engine: init bounds, MLP forward/backward, Adam, finite differences."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from pseudorank.tensor import (
    Mlp,
    NonFiniteGradientError,
    ParameterTensor,
    StaleTapeError,
    adam_step,
    finite_diff_check,
    xavier_init,
)

# frozen oracle: sqrt(6 / (64 + 64)) computed independently
XAVIER_BOUND_64 = 0.21650635094610965


def test_parameter_tensor_buffers_start_zero():
    p = ParameterTensor("t", (3, 4))
    assert p.shape == (3, 4)
    assert p.step_count == 0
    for buf in (p.values, p.grad, p.adam_m, p.adam_v):
        assert buf.dtype == np.float64
        assert not buf.any()


def test_xavier_bound_and_spread():
    p = ParameterTensor("w", (64, 64))
    xavier_init(p, 64, 64, np.random.default_rng(0))
    assert abs(math.sqrt(6 / 128) - XAVIER_BOUND_64) < 1e-16
    assert np.abs(p.values).max() <= XAVIER_BOUND_64
    # variance of U(-b, b) is b^2 / 3
    expected_var = XAVIER_BOUND_64**2 / 3
    assert abs(p.values.var() - expected_var) / expected_var < 0.05


def test_xavier_fan_one_gives_unit_bound():
    p = ParameterTensor("w", (1000,))
    xavier_init(p, 3, 3, np.random.default_rng(1))
    bound = math.sqrt(6 / 6)
    assert np.abs(p.values).max() <= bound
    assert np.abs(p.values).max() > 0.99 * bound  # 1000 draws get close to the edge


def test_xavier_rejects_degenerate_fans():
    p = ParameterTensor("w", (2, 2))
    with pytest.raises(ValueError):
        xavier_init(p, 0, 4, np.random.default_rng(0))


def test_mlp_forward_zero_input_zero_bias():
    mlp = Mlp("m", 3, 5, 2)
    mlp.init_params(np.random.default_rng(0))
    y, _ = mlp.forward(np.zeros((4, 3)))
    assert_allclose(y, np.zeros((4, 2)))


def test_mlp_forward_identity_chain():
    mlp = Mlp("m", 1, 1, 1)
    mlp.w1.values[...] = 1.0
    mlp.w2.values[...] = 1.0
    y, _ = mlp.forward(np.array([[2.5], [-3.0]]))
    # relu kills the negative row
    assert_allclose(y, np.array([[2.5], [0.0]]))


def test_mlp_forward_matches_expression_oracle():
    rng = np.random.default_rng(42)
    mlp = Mlp("m", 4, 8, 2)
    mlp.init_params(rng)
    mlp.b1.values[...] = rng.normal(size=8)
    mlp.b2.values[...] = rng.normal(size=2)
    x = rng.normal(size=(5, 4))
    y, _ = mlp.forward(x)
    expected = np.maximum(x @ mlp.w1.values.T + mlp.b1.values, 0.0) @ mlp.w2.values.T + mlp.b2.values
    assert_allclose(y, expected, atol=1e-12)


def test_mlp_forward_rejects_bad_width():
    mlp = Mlp("m", 4, 8, 2)
    with pytest.raises(ValueError, match="shape"):
        mlp.forward(np.zeros((5, 3)))
    with pytest.raises(ValueError, match="shape"):
        mlp.forward(np.zeros(4))


def test_mlp_backward_linear_closed_form():
    rng = np.random.default_rng(3)
    mlp = Mlp("m", 3, 4, 2, activation="identity")
    mlp.init_params(rng)
    x = rng.normal(size=(6, 3))
    g = rng.normal(size=(6, 2))
    y, tape = mlp.forward(x)
    dx = mlp.backward(tape, g)
    assert_allclose(dx, g @ mlp.w2.values @ mlp.w1.values, atol=1e-12)
    h = x @ mlp.w1.values.T + mlp.b1.values
    assert_allclose(mlp.w2.grad, g.T @ h, atol=1e-12)
    assert_allclose(mlp.b2.grad, g.sum(axis=0), atol=1e-12)
    dh = g @ mlp.w2.values
    assert_allclose(mlp.w1.grad, dh.T @ x, atol=1e-12)
    assert_allclose(mlp.b1.grad, dh.sum(axis=0), atol=1e-12)


def test_mlp_backward_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    mlp = Mlp("m", 3, 4, 2)
    mlp.init_params(rng)
    mlp.b1.values[...] = 0.3  # keep pre-activations away from the relu kink
    x = rng.normal(size=(4, 3))
    c = rng.normal(size=(4, 2))  # loss = sum(c * y)

    y, tape = mlp.forward(x)
    mlp.backward(tape, c)

    def loss():
        out, _ = mlp.forward(x)
        return float((c * out).sum())

    report = finite_diff_check(loss, mlp.params, h=1e-6, tol=1e-5, n_coords=mlp.w1.size + 20)
    assert report.passed, f"max rel err {report.max_rel_err} at {report.worst_tensor}"


def test_mlp_backward_accumulates_additively():
    rng = np.random.default_rng(6)
    mlp = Mlp("m", 2, 3, 1)
    mlp.init_params(rng)
    x = rng.normal(size=(3, 2))
    g = rng.normal(size=(3, 1))
    y, tape = mlp.forward(x)
    mlp.backward(tape, g)
    mlp.backward(tape, g)
    twice = mlp.w1.grad.copy()
    for p in mlp.params:
        p.zero_grad()
    _, tape = mlp.forward(x)
    mlp.backward(tape, 2.0 * g)
    assert_allclose(twice, mlp.w1.grad, atol=1e-14)


def test_backward_through_stepped_params_raises():
    mlp = Mlp("m", 2, 2, 1)
    mlp.init_params(np.random.default_rng(0))
    x = np.ones((1, 2))
    _, tape = mlp.forward(x)
    mlp.w1.grad[...] = 1.0
    adam_step(mlp.params, lr=0.01)
    with pytest.raises(StaleTapeError):
        mlp.backward(tape, np.ones((1, 1)))


def test_adam_zero_grad_keeps_values():
    p = ParameterTensor("p", (3,))
    p.values[...] = (1.0, -2.0, 0.5)
    before = p.values.copy()
    adam_step([p], lr=0.1)
    assert_allclose(p.values, before)
    assert p.step_count == 1


def test_adam_first_step_magnitude_close_to_lr():
    # with a constant gradient, the bias-corrected first step is ~lr in magnitude
    p = ParameterTensor("p", (1,))
    p.grad[...] = 7.3
    adam_step([p], lr=0.001)
    assert_allclose(p.values, [-0.001 * 0.9999999900000008], atol=1e-18)


def test_adam_hand_computed_two_steps():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    p = ParameterTensor("p", (1,))
    m = v = 0.0
    x = 0.0
    for t, g in enumerate((2.0, -1.0), start=1):
        p.grad[...] = g
        adam_step([p], lr=lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        assert_allclose(p.values, [x], atol=1e-15)


def test_adam_l2_pulls_toward_zero():
    p = ParameterTensor("p", (1,))
    p.values[...] = 5.0
    for _ in range(200):
        adam_step([p], lr=0.05, l2=0.1)
    assert abs(float(p.values[0])) < 5.0
    assert p.step_count == 200


def test_adam_grad_cleared_after_step():
    p = ParameterTensor("p", (2,))
    p.grad[...] = 1.0
    adam_step([p], lr=0.01)
    assert not p.grad.any()


def test_adam_aborts_on_nonfinite_without_mutation():
    good = ParameterTensor("good", (2,))
    bad = ParameterTensor("bad", (2,))
    good.grad[...] = 1.0
    bad.grad[...] = (np.nan, 1.0)
    before = good.values.copy()
    with pytest.raises(NonFiniteGradientError, match="bad"):
        adam_step([good, bad], lr=0.1)
    assert_allclose(good.values, before)
    assert good.step_count == 0


def test_adam_deterministic_across_identical_tensors():
    def run():
        p = ParameterTensor("p", (4,))
        p.values[...] = (0.1, 0.2, 0.3, 0.4)
        for g in (1.0, -0.5, 0.25):
            p.grad[...] = g
            adam_step([p], lr=0.01, l2=0.001)
        return p.values.copy()

    assert np.array_equal(run(), run())


def test_finite_diff_check_quadratic_is_tight():
    p = ParameterTensor("x", (10,))
    p.values[...] = np.linspace(-2, 2, 10)
    p.grad[...] = p.values  # analytic gradient of 0.5 * ||x||^2

    report = finite_diff_check(lambda: 0.5 * float((p.values**2).sum()), [p], h=1e-5, tol=1e-9)
    assert report.passed
    assert report.max_rel_err < 1e-9


def test_finite_diff_check_catches_wrong_gradient():
    p = ParameterTensor("x", (5,))
    p.values[...] = 1.0
    p.grad[...] = 3.0  # wrong: true gradient is 1.0 everywhere

    report = finite_diff_check(lambda: float(p.values.sum()), [p], h=1e-5, tol=1e-4)
    assert not report.passed
    assert report.worst_tensor == "x"
    assert report.failures


def test_finite_diff_check_rejects_zero_h():
    p = ParameterTensor("x", (2,))
    with pytest.raises(ValueError):
        finite_diff_check(lambda: 0.0, [p], h=0.0)
