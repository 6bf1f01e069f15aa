"""
Dense tensors and the parameter containers of the three layer kinds.

Tensors are plain numpy float64 arrays. Arrays built from external input go
through `as_tensor`, which rejects non-finite values and freezes the buffer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

Tensor = npt.NDArray[np.float64]

ArrayLike = Union[npt.ArrayLike, Tensor]


class ShapeError(ValueError):
    """
    Raised when tensor shapes are inconsistent.

    The message always names the offending dimension.
    """


class InvalidStateError(Exception):
    """
    Raised when an operation is performed on an object that is not in the
    prerequisite state, e.g. a backward pass without a forward cache.
    """


def as_tensor(values: ArrayLike, dims: Optional[Sequence[int]] = None) -> Tensor:
    """
    Build an immutable float64 tensor from external input.

    `dims`, if given, must be positive integers whose product matches the
    number of values; values are read in row-major order.
    """
    array = np.array(values, dtype=np.float64)
    if dims is not None:
        dims = tuple(int(dim) for dim in dims)
        if any(dim <= 0 for dim in dims):
            raise ShapeError(f"tensor dims must be positive integers, got {dims}")
        if int(np.prod(dims)) != array.size:
            raise ShapeError(
                f"tensor has {array.size} values but dims {dims} need {int(np.prod(dims))}"
            )
        array = array.reshape(dims)
    if not np.all(np.isfinite(array)):
        raise ValueError("tensor values must be finite (NaN/Inf rejected)")
    array.flags.writeable = False
    return array


# pylint: disable=invalid-name
class LayerKind(IntEnum):
    """
    The layer kinds the architecture is assembled from.
    """

    CONV1D = 1
    LSTM = 2
    DENSE = 3


TENSOR_NAMES: Dict[LayerKind, Tuple[str, ...]] = {
    LayerKind.CONV1D: ("kernel", "bias"),
    # Gate order along the 4H axis is fixed: input, forget, cell, output.
    LayerKind.LSTM: ("w_ih", "w_hh", "bias"),
    LayerKind.DENSE: ("weight", "bias"),
}

LSTM_GATES = ("input", "forget", "cell", "output")


@dataclass(frozen=True)
class LayerParams:
    """
    Named parameter tensors of one layer.

    conv1d: kernel [C_out x C_in x K], bias [C_out]
    lstm:   w_ih [4H x C_in], w_hh [4H x H], bias [4H]
    dense:  weight [D_out x D_in], bias [D_out]
    """

    kind: LayerKind
    tensors: Dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = TENSOR_NAMES[self.kind]
        if tuple(sorted(self.tensors)) != tuple(sorted(expected)):
            raise ShapeError(
                f"{self.kind.name.lower()} layer needs tensors {expected}, "
                f"got {tuple(self.tensors)}"
            )
        getattr(self, f"_check_{self.kind.name.lower()}")()

    def _check_conv1d(self) -> None:
        kernel, bias = self.tensors["kernel"], self.tensors["bias"]
        if kernel.ndim != 3:
            raise ShapeError(f"conv1d kernel must have rank 3, got rank {kernel.ndim}")
        if bias.shape != (kernel.shape[0],):
            raise ShapeError(
                f"conv1d bias must have C_out={kernel.shape[0]} entries, got {bias.shape}"
            )

    def _check_lstm(self) -> None:
        w_ih, w_hh, bias = (self.tensors[name] for name in TENSOR_NAMES[LayerKind.LSTM])
        if w_hh.ndim != 2 or w_hh.shape[0] != 4 * w_hh.shape[1]:
            raise ShapeError(f"lstm w_hh must be [4H x H], got {w_hh.shape}")
        hidden = w_hh.shape[1]
        if w_ih.ndim != 2 or w_ih.shape[0] != 4 * hidden:
            raise ShapeError(f"lstm w_ih must be [4H={4 * hidden} x C_in], got {w_ih.shape}")
        if bias.shape != (4 * hidden,):
            raise ShapeError(f"lstm bias must be [4H={4 * hidden}], got {bias.shape}")

    def _check_dense(self) -> None:
        weight, bias = self.tensors["weight"], self.tensors["bias"]
        if weight.ndim != 2:
            raise ShapeError(f"dense weight must have rank 2, got rank {weight.ndim}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(
                f"dense bias must have D_out={weight.shape[0]} entries, got {bias.shape}"
            )

    @classmethod
    def conv1d(cls, kernel: ArrayLike, bias: ArrayLike) -> LayerParams:
        """
        Build conv1d parameters.
        """
        return cls(LayerKind.CONV1D, {"kernel": _param(kernel), "bias": _param(bias)})

    @classmethod
    def lstm(cls, w_ih: ArrayLike, w_hh: ArrayLike, bias: ArrayLike) -> LayerParams:
        """
        Build lstm parameters.
        """
        return cls(
            LayerKind.LSTM,
            {"w_ih": _param(w_ih), "w_hh": _param(w_hh), "bias": _param(bias)},
        )

    @classmethod
    def dense(cls, weight: ArrayLike, bias: ArrayLike) -> LayerParams:
        """
        Build dense parameters.
        """
        return cls(LayerKind.DENSE, {"weight": _param(weight), "bias": _param(bias)})

    @property
    def in_dim(self) -> int:
        """
        Input width: C_in for conv1d and lstm, D_in for dense.
        """
        if self.kind == LayerKind.CONV1D:
            return int(self.tensors["kernel"].shape[1])
        if self.kind == LayerKind.LSTM:
            return int(self.tensors["w_ih"].shape[1])
        return int(self.tensors["weight"].shape[1])

    @property
    def out_dim(self) -> int:
        """
        Output width: C_out for conv1d, H for lstm, D_out for dense.
        """
        if self.kind == LayerKind.CONV1D:
            return int(self.tensors["kernel"].shape[0])
        if self.kind == LayerKind.LSTM:
            return int(self.tensors["w_hh"].shape[1])
        return int(self.tensors["weight"].shape[0])

    @property
    def param_count(self) -> int:
        """
        Number of scalar parameters actually held.
        """
        return sum(int(tensor.size) for tensor in self.tensors.values())

    def closed_form_count(self) -> int:
        """
        Number of scalar parameters implied by the declared dims.
        """
        return closed_form_count(self.kind, self.in_dim, self.out_dim, self.kernel_size)

    @property
    def kernel_size(self) -> int:
        """
        K for conv1d layers, 1 otherwise.
        """
        if self.kind == LayerKind.CONV1D:
            return int(self.tensors["kernel"].shape[2])
        return 1

    def replace(self, **tensors: ArrayLike) -> LayerParams:
        """
        Returns a copy of these parameters with some tensors replaced.
        """
        updated = dict(self.tensors)
        for name, value in tensors.items():
            updated[name] = _param(value)
        return LayerParams(self.kind, updated)


def closed_form_count(kind: LayerKind, in_dim: int, out_dim: int, kernel: int = 1) -> int:
    """
    Closed-form parameter count of a layer.
    """
    if kind == LayerKind.CONV1D:
        return out_dim * in_dim * kernel + out_dim
    if kind == LayerKind.LSTM:
        return 4 * out_dim * in_dim + 4 * out_dim * out_dim + 4 * out_dim
    return out_dim * in_dim + out_dim


@dataclass
class GradBundle:
    """
    Gradients of a scalar loss with respect to a layer's parameters (keyed
    like LayerParams.tensors) and to the layer input.
    """

    params: Dict[str, Tensor]
    input: Tensor

    def items(self) -> Iterable[Tuple[str, Tensor]]:
        """
        Iterate over parameter gradients, then the input gradient.
        """
        yield from self.params.items()
        yield "input", self.input


def _param(values: ArrayLike) -> Tensor:
    return np.asarray(values, dtype=np.float64)
