"""
Finite-difference verification of the analytic layer gradients.
"""
from __future__ import annotations

from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .layers import forward_cached, layer_backward
from .tensor import ArrayLike, GradBundle, LayerKind, LayerParams, Tensor

# A hook able to alter analytic gradients before comparison; used to make
# sure a broken backward pass is actually detected.
GradTamper = Callable[[GradBundle], GradBundle]

MAX_SUITE_DIM = 8


def max_relative_error(analytic: Tensor, numeric: Tensor) -> float:
    """
    Max over entries of |a - b| / max(|a|, |b|, 1e-8).
    """
    if analytic.size == 0:
        return 0.0
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denominator))


def numeric_gradient(loss: Callable[[Tensor], float], base: Tensor, epsilon: float) -> Tensor:
    """
    Central differences (f(x + eps) - f(x - eps)) / 2 eps for every entry of base.
    """
    grad = np.zeros_like(base, dtype=np.float64)
    flat_grad = grad.reshape(-1)
    for index in range(base.size):
        shifted = np.array(base, dtype=np.float64)
        flat = shifted.reshape(-1)
        flat[index] = base.reshape(-1)[index] + epsilon
        upper = loss(shifted)
        flat[index] = base.reshape(-1)[index] - epsilon
        lower = loss(shifted)
        flat_grad[index] = (upper - lower) / (2.0 * epsilon)
    return grad


def _output_sum(layer: LayerParams, inputs: Tensor, activation: str) -> float:
    out, _ = forward_cached(layer, inputs, activation)
    return float(np.sum(out))


def grad_check(
    layer: LayerParams,
    inputs: ArrayLike,
    epsilon: float = 1e-5,
    activation: str = "identity",
    tamper: Optional[GradTamper] = None,
) -> float:
    """
    Compare every analytic parameter and input gradient against central
    differences, taking the sum of the layer outputs as the loss.

    Returns the maximum relative error; degenerate layers return 0.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    values = np.array(inputs, dtype=np.float64)
    out, cache = forward_cached(layer, values, activation)
    bundle = layer_backward(layer, cache, np.ones_like(out))
    if tamper is not None:
        bundle = tamper(bundle)
    worst = 0.0
    for name, tensor in layer.tensors.items():

        def param_loss(candidate: Tensor, name: str = name) -> float:
            return _output_sum(layer.replace(**{name: candidate}), values, activation)

        numeric = numeric_gradient(param_loss, tensor, epsilon)
        worst = max(worst, max_relative_error(bundle.params[name], numeric))
    numeric = numeric_gradient(
        lambda candidate: _output_sum(layer, candidate, activation), values, epsilon
    )
    return max(worst, max_relative_error(bundle.input, numeric))


def random_layer(
    kind: LayerKind, rng: np.random.Generator
) -> Tuple[LayerParams, Tensor]:
    """
    Draw a small random layer (every dim <= 8) and a matching input.
    """
    in_dim = int(rng.integers(1, MAX_SUITE_DIM + 1))
    out_dim = int(rng.integers(1, MAX_SUITE_DIM + 1))
    if kind == LayerKind.CONV1D:
        k_size = int(rng.integers(1, 4))
        t_w = int(rng.integers(k_size, MAX_SUITE_DIM + 1))
        layer = LayerParams.conv1d(
            rng.normal(0.0, 0.5, (out_dim, in_dim, k_size)), rng.normal(0.0, 0.5, out_dim)
        )
        return layer, rng.normal(0.0, 1.0, (in_dim, t_w))
    if kind == LayerKind.LSTM:
        t_w = int(rng.integers(1, MAX_SUITE_DIM + 1))
        layer = LayerParams.lstm(
            rng.normal(0.0, 0.5, (4 * out_dim, in_dim)),
            rng.normal(0.0, 0.5, (4 * out_dim, out_dim)),
            rng.normal(0.0, 0.5, 4 * out_dim),
        )
        return layer, rng.normal(0.0, 1.0, (in_dim, t_w))
    layer = LayerParams.dense(
        rng.normal(0.0, 0.5, (out_dim, in_dim)), rng.normal(0.0, 0.5, out_dim)
    )
    return layer, rng.normal(0.0, 1.0, in_dim)


def grad_check_suite(
    n_configs: int = 100,
    seed: int = 0,
    epsilon: float = 1e-5,
    tamper: Optional[GradTamper] = None,
) -> Dict[str, float]:
    """
    Run grad_check on `n_configs` seeded random configurations of every
    layer kind; returns the worst relative error per kind.
    """
    results: Dict[str, float] = {}
    streams = np.random.SeedSequence(seed).spawn(len(LayerKind))
    for kind, stream in zip(LayerKind, streams):
        rng = np.random.default_rng(stream)
        worst = 0.0
        for _ in range(n_configs):
            layer, inputs = random_layer(kind, rng)
            worst = max(worst, grad_check(layer, inputs, epsilon, tamper=tamper))
        results[kind.name.lower()] = worst
    return results
