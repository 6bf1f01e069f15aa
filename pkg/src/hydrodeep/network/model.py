"""
The dual-branch discharge network and its cnn_only / lstm_only baselines.

Every layer is shared across grids and grid features are averaged, so one
model accepts samples from watersheds of any grid count:

    history [B, L, 2, 7] -> conv stack (per grid) -> mean over grids
        -> lstm stack -> last hidden state --------------------+
    target_day [B, L, 2] -> dense (per grid) -> mean over grids -+-> head -> [B]
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..data.windows import SampleBatch, WindowedSample, stack_samples
from ..nn.gradcheck import max_relative_error, numeric_gradient
from ..nn.layers import (
    ForwardCache,
    conv1d_cached,
    dense_cached,
    layer_backward,
    lstm_cached,
    relu_backward,
    relu_forward,
)
from ..nn.tensor import ArrayLike, InvalidStateError, LayerKind, LayerParams, Tensor
from .arch import GROUPS, ArchSpec, LayerDims

LOG = logging.getLogger(__name__)

ModelGrads = Dict[str, Tensor]

ModelGradTamper = Callable[[ModelGrads], ModelGrads]

# Samples per forward pass when predicting large sample lists.
PREDICT_CHUNK = 256


def group_of(name: str) -> str:
    """
    The group prefix of a parameter name.
    """
    group = name.split(".")[0]
    if group not in GROUPS:
        raise ValueError(f"parameter {name!r} is outside the groups {GROUPS}")
    return group


@dataclass(eq=False)
class Model:
    """
    An architecture, its named parameter tensors in canonical order, and the
    seed they were initialized from.

    Parameter arrays are read-only; updates build a new Model through
    `replace_params`.
    """

    arch: ArchSpec
    params: Dict[str, Tensor]
    seed: int

    def __post_init__(self) -> None:
        shapes = self.arch.param_shapes()
        if list(self.params) != list(shapes):
            raise ValueError(
                f"parameters {list(self.params)} do not match the architecture {list(shapes)}"
            )
        params = {}
        for name, shape in shapes.items():
            tensor = np.asarray(self.params[name], dtype=np.float64)
            if tensor.shape != shape:
                raise ValueError(f"parameter {name} has shape {tensor.shape}, expected {shape}")
            if tensor.flags.writeable:
                tensor = tensor.copy()
                tensor.flags.writeable = False
            params[name] = tensor
        self.params = params

    @property
    def param_count(self) -> int:
        """
        Number of scalar parameters.
        """
        return sum(int(tensor.size) for tensor in self.params.values())

    def group_of(self, name: str) -> str:
        """
        The group prefix of one of this model's parameters.
        """
        if name not in self.params:
            raise KeyError(name)
        return group_of(name)

    def group_tensors(self, group: str) -> Dict[str, Tensor]:
        """
        The parameters of one group.
        """
        if group not in GROUPS:
            raise ValueError(f"unknown parameter group {group!r}, expected one of {GROUPS}")
        return {name: tensor for name, tensor in self.params.items() if group_of(name) == group}

    def replace_params(self, updates: Mapping[str, ArrayLike]) -> Model:
        """
        A new model with some parameter tensors replaced.
        """
        unknown = set(updates) - set(self.params)
        if unknown:
            raise KeyError(f"unknown parameters {sorted(unknown)}")
        params = dict(self.params)
        for name, value in updates.items():
            params[name] = np.asarray(value, dtype=np.float64)
        return Model(self.arch, params, self.seed)

    @cached_property
    def layers(self) -> Dict[str, LayerParams]:
        """
        LayerParams of every layer, keyed by layer prefix.
        """
        layers = {}
        for dims in self.arch.layers():
            tensors = {
                name[len(dims.prefix) + 1 :]: tensor
                for name, tensor in self.params.items()
                if name.rsplit(".", 1)[0] == dims.prefix
            }
            layers[dims.prefix] = LayerParams(dims.kind, tensors)
        return layers


def _glorot(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def _init_layer(layer: LayerDims, rng: np.random.Generator) -> Dict[str, Tensor]:
    if layer.kind == LayerKind.CONV1D:
        shape = (layer.out_dim, layer.in_dim, layer.kernel)
        return {
            "kernel": _glorot(
                rng, shape, layer.in_dim * layer.kernel, layer.out_dim * layer.kernel
            ),
            "bias": np.zeros(layer.out_dim),
        }
    if layer.kind == LayerKind.LSTM:
        hidden = layer.out_dim
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0
        return {
            "w_ih": _glorot(rng, (4 * hidden, layer.in_dim), layer.in_dim, 4 * hidden),
            "w_hh": _glorot(rng, (4 * hidden, hidden), hidden, 4 * hidden),
            "bias": bias,
        }
    return {
        "weight": _glorot(rng, (layer.out_dim, layer.in_dim), layer.in_dim, layer.out_dim),
        "bias": np.zeros(layer.out_dim),
    }


def build_model(arch: ArchSpec, seed: int) -> Model:
    """
    Initialize a model: Glorot-uniform weights drawn in canonical parameter
    order from one seeded generator, zero biases, lstm forget bias 1.
    """
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    for layer in arch.layers():
        for name, tensor in _init_layer(layer, rng).items():
            params[f"{layer.prefix}.{name}"] = tensor
    model = Model(arch, params, seed)
    LOG.debug("built %s model with %d parameters (seed %d)", arch.variant, model.param_count, seed)
    return model


@dataclass
class ModelCache:
    """
    Everything a forward pass saved for `backward`.
    """

    n_grids: int
    layer_caches: Dict[str, ForwardCache] = field(default_factory=dict)
    conv_pre: Dict[str, Tensor] = field(default_factory=dict)
    sequence_shape: Tuple[int, ...] = ()


def _prefixes(model: Model, group: str) -> List[str]:
    return [prefix for prefix in model.layers if prefix.split(".")[0] == group]


def forward_batch(model: Model, batch: SampleBatch) -> Tuple[Tensor, ModelCache]:
    """
    Predict the normalized discharge of every sample of a batch.

    Returns predictions [B] and the cache `backward` needs.
    """
    arch = model.arch
    history = np.asarray(batch.history, dtype=np.float64)
    if history.ndim != 4:
        raise ValueError(f"history must be [B, L, 2, 7], got shape {history.shape}")
    cache = ModelCache(n_grids=history.shape[1])

    if arch.variant == "lstm_only":
        sequence = history.mean(axis=1)
    else:
        values = history
        for prefix in _prefixes(model, "conv"):
            pre, cache.layer_caches[prefix] = conv1d_cached(values, model.layers[prefix])
            cache.conv_pre[prefix] = pre
            values = relu_forward(pre)
        # Grid mean: [B, C, T']
        sequence = values.mean(axis=1)
    cache.sequence_shape = sequence.shape

    if arch.variant == "cnn_only":
        temporal = sequence.reshape(sequence.shape[0], -1)
    else:
        for prefix in _prefixes(model, "lstm"):
            (sequence, _, _), cache.layer_caches[prefix] = lstm_cached(
                sequence, model.layers[prefix]
            )
        temporal = sequence[..., -1]

    target, cache.layer_caches["target_branch"] = dense_cached(
        batch.target_day, model.layers["target_branch"], "relu"
    )
    values = np.concatenate([temporal, target.mean(axis=1)], axis=-1)
    head = _prefixes(model, "head")
    for position, prefix in enumerate(head):
        activation = "identity" if position == len(head) - 1 else "relu"
        values, cache.layer_caches[prefix] = dense_cached(values, model.layers[prefix], activation)
    return values[:, 0], cache


def backward(model: Model, cache: Optional[ModelCache], d_predictions: ArrayLike) -> ModelGrads:
    """
    Gradients of a scalar loss with respect to every parameter, given the
    gradient with respect to the predictions of `forward_batch`.
    """
    if cache is None or not cache.layer_caches:
        raise InvalidStateError("backward needs the cache of forward_batch")
    arch = model.arch
    grads: ModelGrads = {}

    def collect(prefix: str, upstream: Tensor) -> Tensor:
        bundle = layer_backward(model.layers[prefix], cache.layer_caches[prefix], upstream)
        for name, grad in bundle.params.items():
            grads[f"{prefix}.{name}"] = grad
        return bundle.input

    upstream = np.asarray(d_predictions, dtype=np.float64)[:, np.newaxis]
    for prefix in reversed(_prefixes(model, "head")):
        upstream = collect(prefix, upstream)
    width = arch.head_input - arch.target_branch_units
    d_temporal, d_target = upstream[:, :width], upstream[:, width:]

    d_target_grid = np.repeat(d_target[:, np.newaxis, :] / cache.n_grids, cache.n_grids, axis=1)
    collect("target_branch", d_target_grid)

    if arch.variant == "cnn_only":
        d_sequence = d_temporal.reshape(cache.sequence_shape)
    else:
        lstm_prefixes = _prefixes(model, "lstm")
        last_shape = cache.layer_caches[lstm_prefixes[-1]].input_shape
        d_sequence = np.zeros(last_shape[:-2] + (arch.lstm_layers[-1], last_shape[-1]))
        d_sequence[..., -1] = d_temporal
        for prefix in reversed(lstm_prefixes):
            d_sequence = collect(prefix, d_sequence)

    if arch.variant != "lstm_only":
        d_values = np.repeat(d_sequence[:, np.newaxis] / cache.n_grids, cache.n_grids, axis=1)
        for prefix in reversed(_prefixes(model, "conv")):
            d_values = collect(prefix, relu_backward(cache.conv_pre[prefix], d_values))

    return {name: grads[name] for name in model.params}


def forward(model: Model, sample: WindowedSample) -> float:
    """
    Predicted normalized discharge of one sample.
    """
    predictions, _ = forward_batch(model, stack_samples([sample]))
    return float(predictions[0])


def predict(model: Model, samples: List[WindowedSample]) -> Tensor:
    """
    Predictions for a list of samples of one watershed, in order.
    """
    chunks = [
        forward_batch(model, stack_samples(samples[start : start + PREDICT_CHUNK]))[0]
        for start in range(0, len(samples), PREDICT_CHUNK)
    ]
    return np.concatenate(chunks) if chunks else np.zeros(0)


def model_grad_check(
    model: Model,
    batch: SampleBatch,
    epsilon: float = 1e-5,
    tamper: Optional[ModelGradTamper] = None,
) -> float:
    """
    Max relative error between `backward` and central differences over every
    parameter, taking the sum of the batch predictions as the loss.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    predictions, cache = forward_batch(model, batch)
    grads = backward(model, cache, np.ones_like(predictions))
    if tamper is not None:
        grads = tamper(grads)
    worst = 0.0
    for name, tensor in model.params.items():

        def loss(candidate: Tensor, name: str = name) -> float:
            return float(np.sum(forward_batch(model.replace_params({name: candidate}), batch)[0]))

        worst = max(worst, max_relative_error(grads[name], numeric_gradient(loss, tensor, epsilon)))
    return worst


def tiny_arch(variant: str = "hydrodeep") -> ArchSpec:
    """
    A small architecture for gradient checks and quick runs.
    """
    return ArchSpec.from_fields(
        {"conv": "3:2,4:2", "lstm": "3", "target_units": "2", "head": "4,1"}
    ).as_variant(variant)


def model_grad_check_suite(
    n_configs: int = 100,
    seed: int = 0,
    epsilon: float = 1e-5,
    n_grids: int = 2,
    tamper: Optional[ModelGradTamper] = None,
) -> Dict[str, float]:
    """
    model_grad_check over `n_configs` seeded (model, batch) pairs of the
    tiny architecture; returns the worst error per variant.
    """
    results: Dict[str, float] = {}
    variants = ("hydrodeep", "cnn_only", "lstm_only")
    for variant, stream in zip(variants, np.random.SeedSequence(seed).spawn(len(variants))):
        rng = np.random.default_rng(stream)
        arch = tiny_arch(variant)
        worst = 0.0
        for _ in range(n_configs):
            model = build_model(arch, int(rng.integers(0, 2**32)))
            batch = SampleBatch(
                history=rng.uniform(0.0, 1.0, (2, n_grids, 2, 7)),
                target_day=rng.uniform(0.0, 1.0, (2, n_grids, 2)),
                label=np.zeros(2),
            )
            worst = max(worst, model_grad_check(model, batch, epsilon, tamper))
        results[variant] = worst
    return results
