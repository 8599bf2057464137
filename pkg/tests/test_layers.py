"""Every hand-derived backward pass is checked against central finite
differences in float64 (the independent oracle in conftest)."""

import numpy as np
import pytest

from conftest import numerical_gradient, relative_error
from fedcontrast.errors import DimensionError
from fedcontrast.layers import (
    BatchNorm,
    Conv2d,
    Dropout,
    Flatten,
    Linear,
    MaxPool2d,
    ReLU,
    Sequential,
    Softmax,
)

TOL = 1e-6


def check_layer_gradients(layer, x, train=False, rng_seed=None, params=None):
    """Compare analytic input/parameter gradients with finite differences
    for the scalar loss sum(forward(x) * direction)."""
    rng = np.random.default_rng(987651234)
    if params is None:
        params = layer.init_params(np.random.default_rng(0), dtype=np.float64)

    def run():
        layer_rng = np.random.default_rng(rng_seed) if rng_seed is not None else None
        y, cache, _ = layer.forward(params, x, train=train, rng=layer_rng)
        return y, cache

    y0, cache0 = run()
    direction = rng.standard_normal(y0.shape)

    def loss():
        y, _ = run()
        return float((y * direction).sum())

    dx, grads = layer.backward(params, cache0, direction.astype(np.float64))
    num_dx = numerical_gradient(loss, x)
    assert relative_error(dx, num_dx) < TOL, f"input gradient mismatch for {type(layer).__name__}"
    for name, g in grads.items():
        num_g = numerical_gradient(loss, params[name])
        assert relative_error(g, num_g) < TOL, f"gradient mismatch for {name}"


def test_conv2d_valid_gradients():
    x = np.random.default_rng(1).standard_normal((3, 8, 8, 2))
    check_layer_gradients(Conv2d("backbone/c", 2, 4, 3), x)


def test_conv2d_same_padding_gradients():
    x = np.random.default_rng(2).standard_normal((2, 6, 6, 3))
    check_layer_gradients(Conv2d("backbone/c", 3, 5, 3, pad=1), x)


def test_conv2d_output_shape():
    conv = Conv2d("backbone/c", 1, 10, 5)
    params = conv.init_params(np.random.default_rng(0))
    y, _, _ = conv.forward(params, np.zeros((4, 28, 28, 1), np.float32))
    assert y.shape == (4, 24, 24, 10)


def test_conv2d_rejects_wrong_channels():
    conv = Conv2d("backbone/c", 3, 4, 3)
    params = conv.init_params(np.random.default_rng(0))
    with pytest.raises(DimensionError):
        conv.forward(params, np.zeros((1, 8, 8, 1), np.float32))


def test_linear_gradients():
    x = np.random.default_rng(3).standard_normal((5, 7))
    check_layer_gradients(Linear("head/fc", 7, 4), x)


def test_maxpool_gradients():
    # Ties are measure-zero for continuous draws; keep values well separated.
    x = np.random.default_rng(4).permutation(np.arange(2 * 4 * 4 * 3)).astype(np.float64)
    x = x.reshape(2, 4, 4, 3)
    check_layer_gradients(MaxPool2d(), x)


def test_maxpool_forward_values():
    x = np.arange(16, dtype=np.float32).reshape(1, 4, 4, 1)
    y, _, _ = MaxPool2d().forward({}, x)
    np.testing.assert_array_equal(y[0, :, :, 0], [[5, 7], [13, 15]])


def test_relu_gradients():
    x = np.random.default_rng(5).standard_normal((4, 6)) + 0.1  # keep away from the kink
    x[x < 0] -= 0.2
    check_layer_gradients(ReLU(), x)


def test_flatten_round_trip():
    x = np.random.default_rng(6).standard_normal((3, 2, 2, 5))
    flat = Flatten()
    y, cache, _ = flat.forward({}, x)
    assert y.shape == (3, 20)
    dx, _ = flat.backward({}, cache, y)
    np.testing.assert_array_equal(dx, x)


def test_batchnorm_train_gradients():
    x = np.random.default_rng(7).standard_normal((6, 5))
    check_layer_gradients(BatchNorm("backbone/bn", 5), x, train=True)


def test_batchnorm_nhwc_train_gradients():
    x = np.random.default_rng(8).standard_normal((2, 3, 3, 4))
    check_layer_gradients(BatchNorm("backbone/bn", 4), x, train=True)


def test_batchnorm_eval_gradients():
    x = np.random.default_rng(9).standard_normal((6, 5))
    layer = BatchNorm("backbone/bn", 5)
    params = layer.init_params(np.random.default_rng(0), dtype=np.float64)
    params["backbone/bn/running_mean"] = np.random.default_rng(10).standard_normal(5)
    params["backbone/bn/running_var"] = np.random.default_rng(11).uniform(0.5, 2.0, 5)
    check_layer_gradients(layer, x, train=False, params=params)


def test_batchnorm_stat_updates_are_returned_not_applied():
    layer = BatchNorm("backbone/bn", 3)
    params = layer.init_params(np.random.default_rng(0), dtype=np.float64)
    before = {k: v.copy() for k, v in params.items()}
    x = np.random.default_rng(12).standard_normal((8, 3))
    _, _, stats = layer.forward(params, x, train=True)
    assert set(stats) == {"backbone/bn/running_mean", "backbone/bn/running_var"}
    for name in params:
        np.testing.assert_array_equal(params[name], before[name])
    # momentum-0.1 update from (0, 1) toward the batch statistics
    np.testing.assert_allclose(stats["backbone/bn/running_mean"], 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(
        stats["backbone/bn/running_var"], 0.9 + 0.1 * x.var(axis=0, ddof=1))


def test_batchnorm_eval_uses_running_stats():
    layer = BatchNorm("backbone/bn", 2)
    params = layer.init_params(np.random.default_rng(0), dtype=np.float64)
    params["backbone/bn/running_mean"][:] = [1.0, -1.0]
    params["backbone/bn/running_var"][:] = [4.0, 0.25]
    x = np.array([[3.0, 0.0]])
    y, _, _ = layer.forward(params, x, train=False)
    np.testing.assert_allclose(y, [[2.0 / np.sqrt(4 + 1e-5), 1.0 / np.sqrt(0.25 + 1e-5)]])


def test_dropout_gradients_with_fixed_mask():
    x = np.random.default_rng(13).standard_normal((5, 8))
    check_layer_gradients(Dropout(0.4), x, train=True, rng_seed=99)


def test_dropout_identity_in_eval():
    x = np.random.default_rng(14).standard_normal((5, 8))
    y, _, _ = Dropout(0.5).forward({}, x, train=False)
    np.testing.assert_array_equal(y, x)


def test_dropout_scales_kept_units():
    x = np.ones((1000, 4))
    y, _, _ = Dropout(0.5).forward({}, x, train=True, rng=np.random.default_rng(0))
    kept = y[y > 0]
    np.testing.assert_allclose(kept, 2.0)
    assert 0.4 < (y > 0).mean() < 0.6


def test_softmax_gradients():
    x = np.random.default_rng(15).standard_normal((6, 5))
    check_layer_gradients(Softmax(), x)


def test_softmax_rows_sum_to_one_for_extreme_logits():
    x = np.array([[1e4, -1e4, 0.0], [700.0, 700.0, -700.0]])
    y, _, _ = Softmax().forward({}, x)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
    assert np.isfinite(y).all()


def test_sequential_chains_gradients():
    seq = Sequential([
        Conv2d("backbone/c1", 1, 3, 3),
        MaxPool2d(),
        ReLU(),
        Flatten(),
        Linear("backbone/fc", 3 * 3 * 3, 4),
    ])
    params = seq.init_params(np.random.default_rng(0), dtype=np.float64)
    x = np.random.default_rng(16).standard_normal((2, 8, 8, 1))
    y0, caches, _ = seq.forward(params, x)
    direction = np.random.default_rng(17).standard_normal(y0.shape)

    def loss():
        y, _, _ = seq.forward(params, x)
        return float((y * direction).sum())

    dx, grads = seq.backward(params, caches, direction)
    assert relative_error(dx, numerical_gradient(loss, x)) < TOL
    for name in params:
        assert relative_error(grads[name], numerical_gradient(loss, params[name])) < TOL


def test_sequential_rejects_duplicate_names():
    with pytest.raises(ValueError):
        Sequential([Linear("head/fc", 2, 2), Linear("head/fc", 2, 2)])
