"""
Forward and backward passes of the conv1d, lstm and dense layers.

Every operation accepts any number of leading batch axes in front of the
single-sample shapes: conv1d and lstm take [..., C_in, T_w], dense takes
[..., D_in]. All functions are pure; caches hold copies of what the
backward pass needs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    ArrayLike,
    GradBundle,
    InvalidStateError,
    LayerKind,
    LayerParams,
    ShapeError,
    Tensor,
)

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class ForwardCache:
    """
    State saved by a forward pass for the matching backward pass.
    """

    kind: LayerKind
    input_shape: Tuple[int, ...]
    saved: Dict[str, Tensor] = field(default_factory=dict)
    activation: str = "identity"


def sigmoid(values: Tensor) -> Tensor:
    """
    Numerically stable logistic function.
    """
    out = np.empty_like(values)
    positive = values >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-values[positive]))
    exp_values = np.exp(values[~positive])
    out[~positive] = exp_values / (1.0 + exp_values)
    return out


def relu_forward(values: ArrayLike) -> Tensor:
    """
    Elementwise max(0, x).
    """
    return np.maximum(np.asarray(values, dtype=np.float64), 0.0)


def relu_backward(pre_activation: Tensor, upstream: Tensor) -> Tensor:
    """
    Mask the upstream gradient where the pre-activation was not positive.
    """
    return np.where(pre_activation > 0, upstream, 0.0)


def _expect_kind(params: LayerParams, kind: LayerKind) -> None:
    if params.kind != kind:
        raise ShapeError(
            f"expected {kind.name.lower()} parameters, got {params.kind.name.lower()}"
        )


def _sequence_input(inputs: ArrayLike, params: LayerParams, layer: str) -> Tensor:
    values = np.asarray(inputs, dtype=np.float64)
    if values.ndim < 2:
        raise ShapeError(f"{layer} input must be [..., C_in, T_w], got rank {values.ndim}")
    if values.shape[-2] != params.in_dim:
        raise ShapeError(
            f"{layer} input channel dimension C_in is {values.shape[-2]}, "
            f"parameters expect C_in={params.in_dim}"
        )
    return values


def conv1d_cached(
    inputs: ArrayLike, params: LayerParams, padding: str = "valid"
) -> Tuple[Tensor, ForwardCache]:
    """
    Valid-padding, stride-1 convolution along the last (time) axis.

    out[c, t] = bias[c] + sum_{c', k} kernel[c, c', k] * input[c', t + k]
    """
    _expect_kind(params, LayerKind.CONV1D)
    if padding != "valid":
        raise ValueError(f"only valid padding is supported, got {padding!r}")
    values = _sequence_input(inputs, params, "conv1d")
    kernel, bias = params.tensors["kernel"], params.tensors["bias"]
    c_out, c_in, k_size = kernel.shape
    t_w = values.shape[-1]
    if t_w < k_size:
        raise ShapeError(f"conv1d window length T_w={t_w} is shorter than kernel size K={k_size}")
    t_out = t_w - k_size + 1
    flat = values.reshape(-1, c_in, t_w)
    # [N, C_in, T_out, K] -> [N * T_out, C_in * K]
    windows = sliding_window_view(flat, k_size, axis=2)
    columns = windows.transpose(0, 2, 1, 3).reshape(-1, c_in * k_size)
    out = columns @ kernel.reshape(c_out, -1).T + bias
    out = out.reshape(flat.shape[0], t_out, c_out).transpose(0, 2, 1)
    out = out.reshape(values.shape[:-2] + (c_out, t_out))
    return out, ForwardCache(LayerKind.CONV1D, values.shape, {"columns": columns})


def conv1d_forward(inputs: ArrayLike, params: LayerParams, padding: str = "valid") -> Tensor:
    """
    Convolve [..., C_in, T_w] into [..., C_out, T_w - K + 1].
    """
    return conv1d_cached(inputs, params, padding)[0]


def dense_cached(
    inputs: ArrayLike, params: LayerParams, activation: str = "identity"
) -> Tuple[Tensor, ForwardCache]:
    """
    out = activation(W . input + b)
    """
    _expect_kind(params, LayerKind.DENSE)
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}, expected one of {ACTIVATIONS}")
    values = np.asarray(inputs, dtype=np.float64)
    if values.ndim < 1 or values.shape[-1] != params.in_dim:
        raise ShapeError(
            f"dense input dimension D_in is {values.shape[-1:] or 'missing'}, "
            f"parameters expect D_in={params.in_dim}"
        )
    pre = values @ params.tensors["weight"].T + params.tensors["bias"]
    out = relu_forward(pre) if activation == "relu" else pre
    saved = {"input": values, "pre": pre}
    return out, ForwardCache(LayerKind.DENSE, values.shape, saved, activation)


def dense_forward(inputs: ArrayLike, params: LayerParams, activation: str = "identity") -> Tensor:
    """
    Apply a dense layer to [..., D_in].
    """
    return dense_cached(inputs, params, activation)[0]


def lstm_cached(
    inputs: ArrayLike,
    params: LayerParams,
    h0: Optional[ArrayLike] = None,
    c0: Optional[ArrayLike] = None,
) -> Tuple[Tuple[Tensor, Tensor, Tensor], ForwardCache]:
    """
    Run an LSTM over the last axis of [..., C_in, T_w].

    Gates use sigmoid, the candidate and output nonlinearity tanh; gate order
    along the 4H axis is input, forget, cell, output.
    """
    _expect_kind(params, LayerKind.LSTM)
    values = _sequence_input(inputs, params, "lstm")
    w_ih, w_hh, bias = params.tensors["w_ih"], params.tensors["w_hh"], params.tensors["bias"]
    hidden = params.out_dim
    batch_shape = values.shape[:-2]
    t_w = values.shape[-1]
    flat = values.reshape(-1, params.in_dim, t_w)
    n_rows = flat.shape[0]
    h_prev = _initial_state(h0, batch_shape, hidden, n_rows, "h0")
    c_prev = _initial_state(c0, batch_shape, hidden, n_rows, "c0")
    # [T, N, 4H]
    projected = np.einsum("nct,gc->tng", flat, w_ih) + bias
    gates = np.empty((t_w, n_rows, 4 * hidden))
    cells = np.empty((t_w + 1, n_rows, hidden))
    hiddens = np.empty((t_w + 1, n_rows, hidden))
    cells[0], hiddens[0] = c_prev, h_prev
    for step in range(t_w):
        z = projected[step] + hiddens[step] @ w_hh.T
        gates[step, :, : 2 * hidden] = sigmoid(z[:, : 2 * hidden])
        gates[step, :, 2 * hidden : 3 * hidden] = np.tanh(z[:, 2 * hidden : 3 * hidden])
        gates[step, :, 3 * hidden :] = sigmoid(z[:, 3 * hidden :])
        i_gate, f_gate, g_gate, o_gate = np.split(gates[step], 4, axis=1)
        cells[step + 1] = f_gate * cells[step] + i_gate * g_gate
        hiddens[step + 1] = o_gate * np.tanh(cells[step + 1])
    sequence = hiddens[1:].transpose(1, 2, 0).reshape(batch_shape + (hidden, t_w))
    final_h = hiddens[-1].reshape(batch_shape + (hidden,))
    final_c = cells[-1].reshape(batch_shape + (hidden,))
    cache = ForwardCache(
        LayerKind.LSTM,
        values.shape,
        {"input": flat, "gates": gates, "cells": cells, "hiddens": hiddens},
    )
    return (sequence, final_h, final_c), cache


def lstm_forward(
    inputs: ArrayLike,
    params: LayerParams,
    h0: Optional[ArrayLike] = None,
    c0: Optional[ArrayLike] = None,
) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Returns (hidden sequence [..., H, T_w], final h [..., H], final c [..., H]).
    """
    return lstm_cached(inputs, params, h0, c0)[0]


def _initial_state(
    state: Optional[ArrayLike],
    batch_shape: Tuple[int, ...],
    hidden: int,
    n_rows: int,
    name: str,
) -> Tensor:
    if state is None:
        return np.zeros((n_rows, hidden))
    values = np.asarray(state, dtype=np.float64)
    if values.shape[-1:] != (hidden,):
        raise ShapeError(f"lstm {name} hidden dimension must be H={hidden}, got {values.shape}")
    return np.broadcast_to(values, batch_shape + (hidden,)).reshape(n_rows, hidden)


def layer_backward(
    layer: LayerParams, cache: Optional[ForwardCache], upstream: ArrayLike
) -> GradBundle:
    """
    Analytic gradients of a scalar loss with respect to every parameter and
    the layer input, given d(loss)/d(output).

    For lstm layers `upstream` is the gradient on the hidden sequence
    [..., H, T_w]; a gradient on the final h belongs in its last column.
    """
    if cache is None:
        raise InvalidStateError("layer_backward needs the cache of a forward pass")
    if cache.kind != layer.kind:
        raise InvalidStateError(
            f"cache comes from a {cache.kind.name.lower()} forward pass, "
            f"layer is {layer.kind.name.lower()}"
        )
    backward = _BACKWARD[layer.kind]
    return backward(layer, cache, np.asarray(upstream, dtype=np.float64))


def _backward_conv1d(layer: LayerParams, cache: ForwardCache, upstream: Tensor) -> GradBundle:
    kernel = layer.tensors["kernel"]
    c_out, c_in, k_size = kernel.shape
    t_w = cache.input_shape[-1]
    t_out = t_w - k_size + 1
    grad = upstream.reshape(-1, c_out, t_out).transpose(0, 2, 1).reshape(-1, c_out)
    columns = cache.saved["columns"]
    d_kernel = (grad.T @ columns).reshape(kernel.shape)
    d_bias = grad.sum(axis=0)
    d_columns = (grad @ kernel.reshape(c_out, -1)).reshape(-1, t_out, c_in, k_size)
    d_input = np.zeros((d_columns.shape[0], c_in, t_w))
    for offset in range(k_size):
        d_input[:, :, offset : offset + t_out] += d_columns[:, :, :, offset].transpose(0, 2, 1)
    return GradBundle(
        {"kernel": d_kernel, "bias": d_bias}, d_input.reshape(cache.input_shape)
    )


def _backward_dense(layer: LayerParams, cache: ForwardCache, upstream: Tensor) -> GradBundle:
    weight = layer.tensors["weight"]
    grad = upstream
    if cache.activation == "relu":
        grad = relu_backward(cache.saved["pre"], grad)
    flat_grad = grad.reshape(-1, weight.shape[0])
    flat_input = cache.saved["input"].reshape(-1, weight.shape[1])
    return GradBundle(
        {"weight": flat_grad.T @ flat_input, "bias": flat_grad.sum(axis=0)},
        (grad @ weight).reshape(cache.input_shape),
    )


def _backward_lstm(layer: LayerParams, cache: ForwardCache, upstream: Tensor) -> GradBundle:
    w_ih, w_hh = layer.tensors["w_ih"], layer.tensors["w_hh"]
    hidden = layer.out_dim
    flat = cache.saved["input"]
    gates, cells, hiddens = cache.saved["gates"], cache.saved["cells"], cache.saved["hiddens"]
    n_rows, _, t_w = flat.shape
    # [T, N, H]
    grad_seq = upstream.reshape(n_rows, hidden, t_w).transpose(2, 0, 1)
    d_w_ih = np.zeros_like(w_ih)
    d_w_hh = np.zeros_like(w_hh)
    d_bias = np.zeros(4 * hidden)
    d_input = np.zeros_like(flat)
    dh_next = np.zeros((n_rows, hidden))
    dc_next = np.zeros((n_rows, hidden))
    for step in reversed(range(t_w)):
        i_gate, f_gate, g_gate, o_gate = np.split(gates[step], 4, axis=1)
        tanh_c = np.tanh(cells[step + 1])
        d_h = grad_seq[step] + dh_next
        d_o = d_h * tanh_c
        d_c = d_h * o_gate * (1.0 - tanh_c**2) + dc_next
        d_z = np.concatenate(
            [
                d_c * g_gate * i_gate * (1.0 - i_gate),
                d_c * cells[step] * f_gate * (1.0 - f_gate),
                d_c * i_gate * (1.0 - g_gate**2),
                d_o * o_gate * (1.0 - o_gate),
            ],
            axis=1,
        )
        d_w_ih += d_z.T @ flat[:, :, step]
        d_w_hh += d_z.T @ hiddens[step]
        d_bias += d_z.sum(axis=0)
        d_input[:, :, step] = d_z @ w_ih
        dh_next = d_z @ w_hh
        dc_next = d_c * f_gate
    return GradBundle(
        {"w_ih": d_w_ih, "w_hh": d_w_hh, "bias": d_bias},
        d_input.reshape(cache.input_shape),
    )


_BACKWARD: Dict[LayerKind, Callable[[LayerParams, ForwardCache, Tensor], GradBundle]] = {
    LayerKind.CONV1D: _backward_conv1d,
    LayerKind.LSTM: _backward_lstm,
    LayerKind.DENSE: _backward_dense,
}


def forward_cached(
    layer: LayerParams, inputs: ArrayLike, activation: str = "identity"
) -> Tuple[Tensor, ForwardCache]:
    """
    Run the forward pass matching the layer kind, returning the main output
    (the hidden sequence for lstm layers) and its cache.
    """
    if layer.kind == LayerKind.CONV1D:
        return conv1d_cached(inputs, layer)
    if layer.kind == LayerKind.LSTM:
        (sequence, _, _), cache = lstm_cached(inputs, layer)
        return sequence, cache
    return dense_cached(inputs, layer, activation)
