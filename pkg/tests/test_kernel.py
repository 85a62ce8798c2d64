"""Tests for the dense/conv primitives and their hand-written backward passes."""

import numpy as np
import pytest

from radkg.kernel import (
    ConvSpec,
    conv2d_bwd,
    conv2d_fwd,
    finite_diff_grad,
    linear_bwd,
    linear_fwd,
    max_relative_error,
    relu,
    relu_bwd,
    sigmoid,
)


def test_linear_fwd_known_value():
    x = np.array([1.0, 2.0])
    w = np.array([[1.0, 3.0], [2.0, 4.0]])
    assert np.array_equal(linear_fwd(x, w), np.array([5.0, 11.0]))


def test_linear_bwd_shapes_and_values():
    x = np.array([1.0, 2.0])
    w = np.array([[1.0, 3.0], [2.0, 4.0]])
    d_out = np.array([1.0, -1.0])
    d_x, d_w = linear_bwd(x, w, d_out)
    assert np.array_equal(d_x, d_out @ w.T)
    assert np.array_equal(d_w, np.outer(x, d_out))


def test_linear_bwd_matches_finite_differences(rng):
    x = rng.normal(size=7)
    w = rng.normal(size=(7, 4))
    d_out = rng.normal(size=4)

    def loss_x(xv):
        return float(np.dot(linear_fwd(xv, w), d_out))

    def loss_w(wv):
        return float(np.dot(linear_fwd(x, wv), d_out))

    d_x, d_w = linear_bwd(x, w, d_out)
    assert max_relative_error(d_x, finite_diff_grad(loss_x, x)) < 1e-6
    assert max_relative_error(d_w, finite_diff_grad(loss_w, w)) < 1e-6


def test_conv2d_fwd_all_ones_sums_window():
    image = np.ones((6, 5))
    kernels = np.ones((1, 5, 5))
    out = conv2d_fwd(image, kernels)
    assert out.shape == (1, 2, 1)
    assert np.array_equal(out, np.full((1, 2, 1), 25.0))


def test_conv2d_fwd_delta_kernel_crops_input(rng):
    """A kernel with a single centered 1 reproduces the valid interior."""
    image = rng.normal(size=(9, 7))
    kernels = np.zeros((1, 5, 5))
    kernels[0, 2, 2] = 1.0
    out = conv2d_fwd(image, kernels)
    assert np.allclose(out[0], image[2:-2, 2:-2], rtol=0, atol=0)


def test_conv2d_fwd_output_shape():
    out = conv2d_fwd(np.zeros((20, 10)), np.zeros((8, 5, 5)))
    assert out.shape == (8, 16, 6)
    assert ConvSpec(channels=8).output_shape(20, 10) == (8, 16, 6)


def test_conv2d_fwd_is_linear_in_input(rng):
    kernels = rng.normal(size=(3, 5, 5))
    a = rng.normal(size=(8, 6))
    b = rng.normal(size=(8, 6))
    lhs = conv2d_fwd(2.0 * a - b, kernels)
    rhs = 2.0 * conv2d_fwd(a, kernels) - conv2d_fwd(b, kernels)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_conv2d_bwd_matches_finite_differences(rng):
    image = rng.normal(size=(7, 6))
    kernels = rng.normal(size=(2, 5, 5))
    d_out = rng.normal(size=(2, 3, 2))

    def loss_image(img):
        return float(np.sum(conv2d_fwd(img, kernels) * d_out))

    def loss_kernels(k):
        return float(np.sum(conv2d_fwd(image, k) * d_out))

    d_image, d_kernels = conv2d_bwd(image, kernels, d_out)
    assert max_relative_error(d_image, finite_diff_grad(loss_image, image)) < 1e-6
    assert max_relative_error(d_kernels, finite_diff_grad(loss_kernels, kernels)) < 1e-6


def test_relu_and_subgradient():
    x = np.array([-2.0, 0.0, 3.5])
    assert np.array_equal(relu(x), np.array([0.0, 0.0, 3.5]))
    # subgradient at exactly zero is taken to be zero
    assert np.array_equal(relu_bwd(x, np.ones(3)), np.array([0.0, 0.0, 1.0]))


def test_relu_idempotent(rng):
    x = rng.normal(size=100)
    assert np.array_equal(relu(relu(x)), relu(x))


def test_sigmoid_scalar_and_array():
    assert sigmoid(0.0) == 0.5
    assert isinstance(sigmoid(0.0), float)
    out = sigmoid(np.array([0.0, 100.0, -100.0]))
    assert out.shape == (3,)
    assert out[0] == 0.5


@pytest.mark.parametrize("x", [-800.0, -50.0, 0.0, 50.0, 800.0])
def test_sigmoid_stable_in_extremes(x):
    p = sigmoid(x)
    assert np.isfinite(p)
    assert 0.0 <= p <= 1.0


def test_sigmoid_symmetry(rng):
    x = rng.normal(scale=10.0, size=50)
    assert np.max(np.abs(sigmoid(x) + sigmoid(-x) - 1.0)) < 1e-15


def test_finite_diff_grad_quadratic():
    grad = finite_diff_grad(lambda t: float(t[0] ** 2), np.array([3.0]))
    assert abs(grad[0] - 6.0) < 1e-8


def test_max_relative_error_floor():
    # denominators are floored so tiny absolute noise near zero stays small
    assert max_relative_error(np.array([0.0]), np.array([1e-9])) < 1e-2
    assert max_relative_error(np.array([1.0]), np.array([2.0])) == 0.5
