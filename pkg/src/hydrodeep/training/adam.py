"""
Adam with bias correction and per-group freezing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Mapping, Tuple

import numpy as np

from ..network.model import group_of
from ..nn.tensor import ShapeError, Tensor

if TYPE_CHECKING:
    from . import TrainConfig


@dataclass(frozen=True)
class AdamState:
    """
    First and second moment estimates, keyed by parameter name.
    """

    m: Dict[str, Tensor]
    v: Dict[str, Tensor]

    @classmethod
    def zeros(cls, params: Mapping[str, Tensor]) -> AdamState:
        """
        Fresh state for a set of parameters.
        """
        return cls(
            {name: np.zeros_like(tensor) for name, tensor in params.items()},
            {name: np.zeros_like(tensor) for name, tensor in params.items()},
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Tensor],
    state: AdamState,
    config: TrainConfig,
    step: int,
) -> Tuple[Dict[str, Tensor], AdamState]:
    """
    One Adam update at step t >= 1:

        m = b1 m + (1 - b1) g          m_hat = m / (1 - b1^t)
        v = b2 v + (1 - b2) g^2        v_hat = v / (1 - b2^t)
        theta = theta - lr m_hat / (sqrt(v_hat) + eps)

    Parameters of frozen groups are returned as the same arrays and their
    moments are left untouched. Inputs are not modified.
    """
    if step < 1:
        raise ValueError(f"adam step index must be >= 1, got {step}")
    updated: Dict[str, Tensor] = {}
    m_state, v_state = dict(state.m), dict(state.v)
    for name, theta in params.items():
        if group_of(name) in config.frozen:
            updated[name] = theta
            continue
        grad = grads[name]
        if grad.shape != theta.shape:
            raise ShapeError(f"gradient of {name} has shape {grad.shape}, parameter {theta.shape}")
        m = config.beta1 * m_state[name] + (1.0 - config.beta1) * grad
        v = config.beta2 * v_state[name] + (1.0 - config.beta2) * grad * grad
        m_hat = m / (1.0 - config.beta1**step)
        v_hat = v / (1.0 - config.beta2**step)
        updated[name] = theta - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
        m_state[name], v_state[name] = m, v
    return updated, AdamState(m_state, v_state)
