"""
Tests for the layer math and the finite-difference checks.
"""

import math

import numpy as np
import pytest

from hydrodeep.nn import (
    GradBundle,
    InvalidStateError,
    LayerKind,
    LayerParams,
    ShapeError,
    as_tensor,
    closed_form_count,
    conv1d_cached,
    conv1d_forward,
    dense_cached,
    dense_forward,
    forward_cached,
    grad_check,
    grad_check_suite,
    layer_backward,
    lstm_forward,
    relu_backward,
    relu_forward,
)
from hydrodeep.nn.gradcheck import random_layer


def test_as_tensor():
    tensor = as_tensor([1, 2, 3, 4, 5, 6], dims=(2, 3))
    assert tensor.shape == (2, 3)
    assert tensor.dtype == np.float64
    assert tensor[1, 0] == 4.0
    assert not tensor.flags.writeable
    with pytest.raises(ShapeError):
        as_tensor([1, 2, 3], dims=(2, 2))
    with pytest.raises(ShapeError):
        as_tensor([1, 2], dims=(0, 2))
    with pytest.raises(ValueError, match="finite"):
        as_tensor([1.0, float("nan")])


def test_conv1d_by_hand():
    layer = LayerParams.conv1d([[[1.0, -1.0]]], [0.5])
    out = conv1d_forward([[1.0, 2.0, 3.0, 4.0]], layer)
    assert out.shape == (1, 3)
    assert np.allclose(out, [[-0.5, -0.5, -0.5]])
    window_sum = LayerParams.conv1d([[[1.0, 1.0]]], [0.0])
    assert np.array_equal(conv1d_forward([[1.0, 2.0, 3.0]], window_sum), [[3.0, 5.0]])


def test_conv1d_of_zero_input_is_the_bias():
    rng = np.random.default_rng(8)
    layer = LayerParams.conv1d(rng.normal(size=(4, 2, 3)), rng.normal(size=4))
    out = conv1d_forward(np.zeros((2, 6)), layer)
    assert np.array_equal(out, np.repeat(layer.tensors["bias"][:, None], 4, axis=1))


def test_conv1d_shapes():
    rng = np.random.default_rng(1)
    layer = LayerParams.conv1d(rng.normal(size=(4, 2, 3)), rng.normal(size=4))
    assert conv1d_forward(rng.normal(size=(2, 7)), layer).shape == (4, 5)
    # Window exactly as long as the kernel gives one step.
    assert conv1d_forward(rng.normal(size=(2, 3)), layer).shape == (4, 1)
    with pytest.raises(ShapeError, match="K=3"):
        conv1d_forward(rng.normal(size=(2, 2)), layer)
    with pytest.raises(ShapeError, match="C_in"):
        conv1d_forward(rng.normal(size=(3, 7)), layer)
    with pytest.raises(ValueError):
        conv1d_forward(rng.normal(size=(2, 7)), layer, padding="same")


def test_conv1d_is_linear_in_its_input():
    rng = np.random.default_rng(2)
    layer = LayerParams.conv1d(rng.normal(size=(3, 2, 2)), rng.normal(size=3))
    unbiased = layer.replace(bias=np.zeros(3))
    x, y = rng.normal(size=(2, 6)), rng.normal(size=(2, 6))
    combined = conv1d_forward(2.5 * x - 0.75 * y, unbiased)
    separate = 2.5 * conv1d_forward(x, unbiased) - 0.75 * conv1d_forward(y, unbiased)
    assert np.max(np.abs(combined - separate)) < 1e-12


def test_leading_batch_axes():
    rng = np.random.default_rng(3)
    conv = LayerParams.conv1d(rng.normal(size=(3, 2, 2)), rng.normal(size=3))
    inputs = rng.normal(size=(4, 5, 2, 7))
    batched = conv1d_forward(inputs, conv)
    assert batched.shape == (4, 5, 3, 6)
    assert np.allclose(batched[2, 3], conv1d_forward(inputs[2, 3], conv))

    lstm = LayerParams.lstm(
        rng.normal(size=(8, 2)), rng.normal(size=(8, 2)), rng.normal(size=8)
    )
    sequence, final_h, final_c = lstm_forward(inputs, lstm)
    assert sequence.shape == (4, 5, 2, 7)
    assert final_h.shape == final_c.shape == (4, 5, 2)
    single, _, _ = lstm_forward(inputs[1, 4], lstm)
    assert np.allclose(sequence[1, 4], single)
    assert np.allclose(sequence[..., -1], final_h)


def test_lstm_with_zero_weights_outputs_zero():
    lstm = LayerParams.lstm(np.zeros((12, 2)), np.zeros((12, 3)), np.zeros(12))
    sequence, final_h, final_c = lstm_forward(np.ones((2, 5)), lstm)
    assert sequence.shape == (3, 5)
    assert np.all(sequence == 0)
    assert np.all(final_h == 0)
    assert np.all(final_c == 0)


def test_lstm_initial_state():
    rng = np.random.default_rng(4)
    lstm = LayerParams.lstm(rng.normal(size=(8, 1)), rng.normal(size=(8, 2)), np.zeros(8))
    inputs = rng.normal(size=(1, 4))
    default = lstm_forward(inputs, lstm)[1]
    explicit = lstm_forward(inputs, lstm, h0=np.zeros(2), c0=np.zeros(2))[1]
    assert np.array_equal(default, explicit)
    with pytest.raises(ShapeError, match="H=2"):
        lstm_forward(inputs, lstm, h0=np.zeros(3))


def _logistic(value):
    return 1.0 / (1.0 + math.exp(-value))


def test_lstm_single_step_by_hand():
    rng = np.random.default_rng(9)
    hidden, c_in = 2, 3
    lstm = LayerParams.lstm(
        rng.normal(size=(4 * hidden, c_in)),
        rng.normal(size=(4 * hidden, hidden)),
        rng.normal(size=4 * hidden),
    )
    x, h0, c0 = rng.normal(size=c_in), rng.normal(size=hidden), rng.normal(size=hidden)
    w_ih, w_hh, bias = (lstm.tensors[name] for name in ("w_ih", "w_hh", "bias"))
    expected_h, expected_c = [], []
    for unit in range(hidden):
        z = []
        for gate in range(4):
            row = gate * hidden + unit
            value = bias[row]
            for col in range(c_in):
                value += w_ih[row, col] * x[col]
            for col in range(hidden):
                value += w_hh[row, col] * h0[col]
            z.append(value)
        i_gate, f_gate = _logistic(z[0]), _logistic(z[1])
        g_gate, o_gate = math.tanh(z[2]), _logistic(z[3])
        cell = f_gate * c0[unit] + i_gate * g_gate
        expected_c.append(cell)
        expected_h.append(o_gate * math.tanh(cell))
    sequence, final_h, final_c = lstm_forward(x[:, None], lstm, h0=h0, c0=c0)
    assert sequence.shape == (hidden, 1)
    assert np.max(np.abs(final_h - expected_h)) < 1e-12
    assert np.max(np.abs(final_c - expected_c)) < 1e-12
    assert np.array_equal(sequence[:, 0], final_h)


def test_lstm_hidden_state_is_bounded():
    rng = np.random.default_rng(10)
    lstm = LayerParams.lstm(rng.normal(size=(16, 3)), rng.normal(size=(16, 4)), rng.normal(size=16))
    sequence, final_h, final_c = lstm_forward(1000.0 * rng.normal(size=(5, 3, 7)), lstm)
    assert np.all(np.abs(sequence) < 1.0)
    # The cell grows by at most one per step.
    assert np.all(np.abs(final_c) <= 7.0)


def test_forward_passes_are_pure():
    rng = np.random.default_rng(11)
    for kind in LayerKind:
        layer, inputs = random_layer(kind, rng)
        kept_inputs = inputs.copy()
        kept_params = {name: tensor.copy() for name, tensor in layer.tensors.items()}
        first, _ = forward_cached(layer, inputs)
        second, _ = forward_cached(layer, inputs)
        assert np.array_equal(first, second)
        assert np.array_equal(inputs, kept_inputs)
        for name, tensor in layer.tensors.items():
            assert np.array_equal(tensor, kept_params[name])


def test_dense_and_relu():
    layer = LayerParams.dense([[1.0, -2.0], [0.5, 0.5]], [0.0, -3.0])
    assert np.allclose(dense_forward([1.0, 1.0], layer), [-1.0, -2.0])
    assert np.allclose(dense_forward([1.0, 1.0], layer, "relu"), [0.0, 0.0])
    assert np.allclose(relu_forward([-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0])
    assert np.allclose(
        relu_backward(np.array([-1.0, 0.0, 2.0]), np.array([5.0, 5.0, 5.0])), [0.0, 0.0, 5.0]
    )
    with pytest.raises(ShapeError, match="D_in"):
        dense_forward([1.0, 2.0, 3.0], layer)
    with pytest.raises(ValueError):
        dense_forward([1.0, 1.0], layer, "tanh")


def test_layer_params_validation():
    with pytest.raises(ShapeError):
        LayerParams.conv1d(np.zeros((2, 1, 3)), np.zeros(3))
    with pytest.raises(ShapeError):
        LayerParams.lstm(np.zeros((8, 1)), np.zeros((8, 3)), np.zeros(8))
    with pytest.raises(ShapeError):
        LayerParams(LayerKind.DENSE, {"weight": np.zeros((1, 1))})


@pytest.mark.parametrize("kind", list(LayerKind))
def test_param_count_closed_form(kind):
    rng = np.random.default_rng(int(kind))
    for _ in range(10):
        layer, _ = random_layer(kind, rng)
        assert layer.param_count == layer.closed_form_count()
        assert layer.param_count == closed_form_count(
            kind, layer.in_dim, layer.out_dim, layer.kernel_size
        )


def test_backward_needs_a_cache():
    layer = LayerParams.dense(np.ones((1, 2)), np.zeros(1))
    with pytest.raises(InvalidStateError):
        layer_backward(layer, None, np.ones(1))
    conv = LayerParams.conv1d(np.ones((1, 2, 1)), np.zeros(1))
    _, cache = conv1d_cached(np.ones((2, 3)), conv)
    with pytest.raises(InvalidStateError):
        layer_backward(layer, cache, np.ones(1))


def test_dense_gradient_by_hand():
    layer = LayerParams.dense([[2.0, -1.0]], [0.5])
    _, cache = dense_cached(np.array([3.0, 4.0]), layer)
    bundle = layer_backward(layer, cache, np.array([1.0]))
    assert np.allclose(bundle.params["weight"], [[3.0, 4.0]])
    assert np.allclose(bundle.params["bias"], [1.0])
    assert np.allclose(bundle.input, [2.0, -1.0])


def test_dense_grad_check():
    rng = np.random.default_rng(5)
    layer = LayerParams.dense(rng.normal(size=(3, 4)), rng.normal(size=3))
    assert grad_check(layer, rng.normal(size=4), epsilon=1e-5) < 1e-6


@pytest.mark.parametrize("kind", [LayerKind.CONV1D, LayerKind.LSTM])
def test_sequence_grad_check(kind):
    rng = np.random.default_rng(6)
    for _ in range(5):
        layer, inputs = random_layer(kind, rng)
        assert grad_check(layer, inputs) < 1e-5


def test_grad_check_detects_a_perturbed_gradient():
    rng = np.random.default_rng(7)
    layer = LayerParams.dense(rng.normal(size=(2, 3)), rng.normal(size=2))

    def tamper(bundle: GradBundle) -> GradBundle:
        weight = np.array(bundle.params["weight"])
        weight[0, 0] *= 1.5
        return GradBundle({**bundle.params, "weight": weight}, bundle.input)

    assert grad_check(layer, rng.normal(size=3), tamper=tamper) > 1e-2


@pytest.mark.parametrize("kind", list(LayerKind))
def test_zero_upstream_gives_zero_gradients(kind):
    layer, inputs = random_layer(kind, np.random.default_rng(12))
    out, cache = forward_cached(layer, inputs)
    bundle = layer_backward(layer, cache, np.zeros_like(out))
    for name, grad in bundle.items():
        assert not np.any(grad), name


def test_grad_check_of_a_zero_layer():
    dense = LayerParams.dense(np.zeros((2, 3)), np.zeros(2))
    assert grad_check(dense, np.zeros(3)) == 0.0
    conv = LayerParams.conv1d(np.zeros((1, 1, 1)), np.zeros(1))
    assert grad_check(conv, np.zeros((1, 1))) == 0.0


def test_grad_check_suite_quick():
    results = grad_check_suite(n_configs=10, seed=1)
    assert sorted(results) == ["conv1d", "dense", "lstm"]
    assert all(error < 1e-4 for error in results.values())


@pytest.mark.slow
def test_grad_check_suite_full():
    results = grad_check_suite(n_configs=100, seed=0)
    assert all(error < 1e-4 for error in results.values())
