import numpy as np
import numpy.testing as npt
import pytest

from app.errors import ConfigurationError, DimensionMismatchError, NumericalError
from nn_app import ops
from nn_app.gradcheck import directional_check, finite_diff_check, relative_error
from nn_app.optim import OptimizerState, adam_step


def _weighted_sum(fn, w):
    return lambda: float(np.sum(fn()[0] * w))


def test_conv3d_keeps_spatial_dims(rng):
    x = rng.standard_normal((2, 4, 5, 6, 3))
    out, _ = ops.conv3d_forward(x, rng.standard_normal((3, 1, 5, 3, 7)))
    assert out.shape == (2, 4, 5, 6, 7)


def test_conv3d_pointwise_is_matmul(rng):
    x = rng.standard_normal((2, 3, 3, 3, 4))
    kernel = rng.standard_normal((1, 1, 1, 4, 5))
    out, _ = ops.conv3d_forward(x, kernel)
    npt.assert_allclose(out, x @ kernel[0, 0, 0])


def test_conv3d_gradients(rng):
    x = rng.standard_normal((2, 3, 4, 5, 2))
    kernel = rng.standard_normal((3, 3, 3, 2, 3))
    w = rng.standard_normal((2, 3, 4, 5, 3))
    _, cache = ops.conv3d_forward(x, kernel)
    gx, gk = ops.conv3d_backward(w, cache)
    f = _weighted_sum(lambda: ops.conv3d_forward(x, kernel), w)
    assert finite_diff_check(f, x, gx, n_coords=None) < 1e-5
    assert finite_diff_check(f, kernel, gk, n_coords=None) < 1e-5


def test_conv3d_rejects_bad_kernels(rng):
    x = rng.standard_normal((1, 3, 3, 3, 2))
    with pytest.raises(ConfigurationError):
        ops.conv3d_forward(x, rng.standard_normal((2, 1, 1, 2, 1)))
    with pytest.raises(DimensionMismatchError):
        ops.conv3d_forward(x, rng.standard_normal((1, 1, 1, 3, 1)))


# ── batch norm ──

def test_batchnorm_gradients(rng):
    x = rng.standard_normal((3, 2, 3, 2, 4)) * 3.0 + 1.0
    state = ops.BNState.create(4)
    state.gamma[...] = rng.uniform(0.5, 1.5, 4)
    w = rng.standard_normal(x.shape)
    _, cache = ops.bn_forward(x, state)
    gx, gg, gb = ops.bn_backward(w, cache)
    f = _weighted_sum(lambda: ops.bn_forward(x, state), w)
    assert finite_diff_check(f, x, gx, n_coords=None) < 1e-4
    assert finite_diff_check(f, state.gamma, gg, n_coords=None) < 1e-4
    assert finite_diff_check(f, state.beta, gb, n_coords=None) < 1e-4
    npt.assert_allclose(gx.sum(axis=(0, 1, 2, 3)), 0.0, atol=1e-10)


def test_batchnorm_constant_channel(rng):
    x = np.full((2, 2, 2, 2, 3), 4.0)
    state = ops.BNState.create(3)
    state.beta[...] = [0.1, 0.2, 0.3]
    out, cache = ops.bn_forward(x, state)
    npt.assert_allclose(out[0, 0, 0, 0], [0.1, 0.2, 0.3])
    gx, _, _ = ops.bn_backward(np.ones_like(x), cache)
    npt.assert_allclose(gx, 0.0, atol=1e-12)


def test_batchnorm_running_statistics(rng):
    x = rng.standard_normal((4, 2, 2, 2, 2)) + 3.0
    state = ops.BNState.create(2)
    ops.bn_forward(x, state)
    npt.assert_allclose(state.running_mean, 0.1 * x.mean(axis=(0, 1, 2, 3)))
    npt.assert_allclose(state.running_var, 0.9 + 0.1 * x.var(axis=(0, 1, 2, 3)))

    state.training = False
    out, cache = ops.bn_forward(x, state)
    expected = (x - state.running_mean) / np.sqrt(state.running_var + 1e-5)
    npt.assert_allclose(out, expected)
    with pytest.raises(ConfigurationError):
        ops.bn_backward(np.ones_like(x), cache)


def test_relu_kink_gets_zero_gradient():
    x = np.array([-1.0, 0.0, 2.0])
    out, mask = ops.relu(x)
    npt.assert_array_equal(out, [0.0, 0.0, 2.0])
    npt.assert_array_equal(ops.relu_backward(np.ones(3), mask), [0.0, 0.0, 1.0])


# ── pooling ──

@pytest.mark.parametrize("padding, expected", [("valid", (2, 2, 3)), ("same", (3, 2, 3))])
def test_pool_geometry(padding, expected):
    out, _ = ops.pool_geometry((5, 4, 6), (2, 2, 2), (2, 2, 2), padding)
    assert out == expected


def test_pool_geometry_errors():
    with pytest.raises(DimensionMismatchError):
        ops.pool_geometry((1, 4, 4), (2, 2, 2), (2, 2, 2), "valid")
    with pytest.raises(ConfigurationError):
        ops.pool_geometry((4, 4, 4), (2, 2, 2), (2, 2, 2), "full")


def test_maxpool_tie_takes_first_cell():
    x = np.zeros((1, 2, 2, 2, 1))
    out, cache = ops.maxpool3d(x, (2, 2, 2), (2, 2, 2))
    assert out.shape == (1, 1, 1, 1, 1)
    grad = ops.maxpool3d_backward(np.ones_like(out), cache)
    assert grad[0, 0, 0, 0, 0] == 1.0
    assert grad.sum() == 1.0


@pytest.mark.parametrize("padding, size", [("valid", (2, 2, 2)), ("same", (3, 3, 2))])
def test_pool_gradients(rng, padding, size):
    x = rng.standard_normal((2, 5, 4, 6, 2))
    for pool, backward in ((ops.maxpool3d, ops.maxpool3d_backward), (ops.avgpool3d, ops.avgpool3d_backward)):
        out, cache = pool(x, size, (2, 2, 2), padding)
        w = rng.standard_normal(out.shape)
        f = _weighted_sum(lambda: pool(x, size, (2, 2, 2), padding), w)
        assert finite_diff_check(f, x, backward(w, cache), n_coords=48, rng=rng) < 1e-4


def test_avgpool_same_ignores_padding():
    out, _ = ops.avgpool3d(np.ones((1, 3, 3, 3, 2)), (3, 3, 3), (1, 1, 1), "same")
    assert out.shape == (1, 3, 3, 3, 2)
    npt.assert_allclose(out, 1.0)


def test_global_avg_pool(rng):
    x = rng.standard_normal((2, 2, 3, 4, 5))
    out, spatial = ops.global_avg_pool(x)
    npt.assert_allclose(out, x.mean(axis=(1, 2, 3)))
    grad = ops.global_avg_pool_backward(np.ones((2, 5)), spatial)
    npt.assert_allclose(grad, 1.0 / 24)


def test_concat_split(rng):
    a, b = rng.standard_normal((1, 2, 2, 2, 3)), rng.standard_normal((1, 2, 2, 2, 1))
    out, sizes = ops.concat_channels([a, b])
    assert out.shape[-1] == 4
    ga, gb = ops.split_channels(out, sizes)
    npt.assert_array_equal(ga, a)
    npt.assert_array_equal(gb, b)
    with pytest.raises(DimensionMismatchError):
        ops.concat_channels([a, rng.standard_normal((1, 2, 2, 3, 1))])


def test_linear_gradients(rng):
    x, weight, bias = rng.standard_normal((4, 6)), rng.standard_normal((6, 3)), rng.standard_normal(3)
    w = rng.standard_normal((4, 3))
    _, cache = ops.linear(x, weight, bias)
    gx, gw, gb = ops.linear_backward(w, cache)
    f = _weighted_sum(lambda: ops.linear(x, weight, bias), w)
    for value, grad in ((x, gx), (weight, gw), (bias, gb)):
        assert finite_diff_check(f, value, grad, n_coords=None) < 1e-5


def test_mse_l2_loss():
    theta = np.ones(2)
    loss, grad_pred, (grad_theta,) = ops.mse_l2_loss(np.zeros((2, 3)), np.ones((2, 3)), [theta], 0.1)
    assert loss == pytest.approx(3.0 + 0.1)
    npt.assert_allclose(grad_pred, -1.0)
    npt.assert_allclose(grad_theta, 0.1)
    with pytest.raises(DimensionMismatchError):
        ops.mse_l2_loss(np.zeros((2, 3)), np.zeros((3, 3)), [], 0.0)


# ── optimizer and checker ──

def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    adam_step(params, {"w": np.array([0.3, -4.0, 1e-3])}, OptimizerState(learning_rate=0.01))
    npt.assert_allclose(params["w"], [0.99, -1.99, 0.49], rtol=1e-4)


def test_adam_rejects_bad_gradients():
    params = {"w": np.ones(3)}
    state = OptimizerState()
    with pytest.raises(NumericalError):
        adam_step(params, {"w": np.array([1.0, np.nan, 0.0])}, state)
    npt.assert_array_equal(params["w"], 1.0)
    assert state.step == 0
    with pytest.raises(DimensionMismatchError):
        adam_step(params, {"w": np.ones(2)}, state)
    with pytest.raises(DimensionMismatchError):
        adam_step(params, {"v": np.ones(3)}, state)


def test_relative_error_is_not_absorbed_by_small_gradients():
    assert relative_error(1.05e-5, 1e-5) == pytest.approx(0.05 / 1.05)
    assert relative_error(10.0, 11.0) == pytest.approx(1.0 / 11.0)
    assert relative_error(0.0, 0.0) == 0.0


def test_five_percent_wrong_small_gradient_fails(rng):
    x = rng.uniform(0.5, 1.5, size=6)
    f = lambda: float(1e-5 * np.sum(x ** 2))  # noqa: E731
    assert finite_diff_check(f, x, 2e-5 * x, n_coords=None) < 1e-5
    assert finite_diff_check(f, x, 1.05 * 2e-5 * x, n_coords=None) > 1e-2


def test_directional_check(rng):
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 4))
    f = lambda: float(np.sum(w * x ** 2))  # noqa: E731
    grad = 2 * w * x
    assert directional_check(f, x, grad, n_directions=6, rng=rng) < 1e-6
    assert directional_check(f, x, 1.05 * grad, n_directions=6, rng=rng) > 1e-2


def test_finite_diff_check_needs_float64():
    x = np.ones(3, dtype=np.float32)
    with pytest.raises(ConfigurationError):
        finite_diff_check(lambda: 0.0, x, x)


def test_finite_diff_check_catches_wrong_gradient(rng):
    x = rng.standard_normal(5)
    f = lambda: float(np.sum(x ** 2))  # noqa: E731
    assert finite_diff_check(f, x, 2 * x, n_coords=None) < 1e-6
    assert finite_diff_check(f, x, 3 * x + 1.0, n_coords=None) > 1e-2
