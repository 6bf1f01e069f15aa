"""
Minimal differentiable numeric core: tensors and the conv1d, lstm and dense
layers with analytic backward passes.
"""
from .gradcheck import grad_check, grad_check_suite, max_relative_error, numeric_gradient
from .layers import (
    ForwardCache,
    conv1d_cached,
    conv1d_forward,
    dense_cached,
    dense_forward,
    forward_cached,
    layer_backward,
    lstm_cached,
    lstm_forward,
    relu_backward,
    relu_forward,
    sigmoid,
)
from .tensor import (
    GradBundle,
    InvalidStateError,
    LayerKind,
    LayerParams,
    ShapeError,
    Tensor,
    as_tensor,
    closed_form_count,
)

__all__ = [
    "ForwardCache",
    "GradBundle",
    "InvalidStateError",
    "LayerKind",
    "LayerParams",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "closed_form_count",
    "conv1d_cached",
    "conv1d_forward",
    "dense_cached",
    "dense_forward",
    "forward_cached",
    "grad_check",
    "grad_check_suite",
    "layer_backward",
    "lstm_cached",
    "lstm_forward",
    "max_relative_error",
    "numeric_gradient",
    "relu_backward",
    "relu_forward",
    "sigmoid",
]
