"""
Network topology description and its canonical text form.

The text form is what checkpoints embed and what `arch.*` run configuration
keys hold:

    conv = 16:3,32:3
    lstm = 32
    target_units = 8
    head = 32,1
    variant = hydrodeep
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Tuple

from ..data.windows import WINDOW
from ..nn.tensor import LayerKind, closed_form_count

VARIANTS = ("hydrodeep", "cnn_only", "lstm_only")

# Parameter group prefixes. Freeze masks address parameters by these.
GROUPS = ("conv", "lstm", "target_branch", "head")

# Per-grid input channels: weighted precipitation and runoff.
INPUT_CHANNELS = 2

ARCH_KEYS = ("conv", "lstm", "target_units", "head", "variant")


class ArchError(ValueError):
    """
    Raised for an invalid architecture.
    """


@dataclass(frozen=True)
class ConvSpec:
    """
    One convolution layer: output channels and kernel size.
    """

    out_channels: int
    kernel: int

    def __str__(self) -> str:
        return f"{self.out_channels}:{self.kernel}"


@dataclass(frozen=True)
class LayerDims:
    """
    Declared dims of one layer of a built network.
    """

    prefix: str
    kind: LayerKind
    in_dim: int
    out_dim: int
    kernel: int = 1

    @property
    def group(self) -> str:
        """
        The parameter group this layer belongs to.
        """
        return self.prefix.split(".")[0]


@dataclass(frozen=True)
class ArchSpec:
    """
    Layer topology of the dual-branch network and its baselines.
    """

    conv_layers: Tuple[ConvSpec, ...] = (ConvSpec(16, 3), ConvSpec(32, 3))
    lstm_layers: Tuple[int, ...] = (32,)
    target_branch_units: int = 8
    head_units: Tuple[int, ...] = (32, 1)
    variant: str = "hydrodeep"

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ArchError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant in ("hydrodeep", "cnn_only") and not self.conv_layers:
            raise ArchError(f"variant {self.variant} needs at least one conv layer")
        if self.variant in ("hydrodeep", "lstm_only") and not self.lstm_layers:
            raise ArchError(f"variant {self.variant} needs at least one lstm layer")
        if self.variant == "cnn_only" and self.lstm_layers:
            raise ArchError("variant cnn_only takes no lstm layers")
        if self.variant == "lstm_only" and self.conv_layers:
            raise ArchError("variant lstm_only takes no conv layers")
        for conv in self.conv_layers:
            if conv.out_channels < 1 or conv.kernel < 1:
                raise ArchError(f"conv layer {conv} needs positive channels and kernel size")
        if self.conv_steps < 1:
            raise ArchError(
                f"kernel sizes {[conv.kernel for conv in self.conv_layers]} exhaust the "
                f"{WINDOW}-day window"
            )
        if any(units < 1 for units in self.lstm_layers):
            raise ArchError(f"lstm hidden sizes must be positive, got {self.lstm_layers}")
        if self.target_branch_units < 1:
            raise ArchError(f"target_branch_units must be positive, got {self.target_branch_units}")
        if not self.head_units or self.head_units[-1] != 1:
            raise ArchError(f"head units must end in 1, got {self.head_units}")
        if any(units < 1 for units in self.head_units):
            raise ArchError(f"head units must be positive, got {self.head_units}")

    @property
    def conv_steps(self) -> int:
        """
        Sequence length T' left after the valid-padding convolutions.
        """
        return WINDOW - sum(conv.kernel - 1 for conv in self.conv_layers)

    @property
    def sequence_channels(self) -> int:
        """
        Channels of the grid-mean feature sequence.
        """
        return self.conv_layers[-1].out_channels if self.conv_layers else INPUT_CHANNELS

    @property
    def head_input(self) -> int:
        """
        Width of the concatenated vector entering the head.
        """
        if self.variant == "cnn_only":
            temporal = self.sequence_channels * self.conv_steps
        else:
            temporal = self.lstm_layers[-1]
        return temporal + self.target_branch_units

    def layers(self) -> List[LayerDims]:
        """
        Every layer in canonical parameter order: conv, lstm, target branch,
        head.
        """
        layers = []
        channels = INPUT_CHANNELS
        for index, conv in enumerate(self.conv_layers):
            layers.append(
                LayerDims(
                    f"conv.{index}", LayerKind.CONV1D, channels, conv.out_channels, conv.kernel
                )
            )
            channels = conv.out_channels
        for index, hidden in enumerate(self.lstm_layers):
            layers.append(LayerDims(f"lstm.{index}", LayerKind.LSTM, channels, hidden))
            channels = hidden
        layers.append(
            LayerDims("target_branch", LayerKind.DENSE, INPUT_CHANNELS, self.target_branch_units)
        )
        width = self.head_input
        for index, units in enumerate(self.head_units):
            layers.append(LayerDims(f"head.{index}", LayerKind.DENSE, width, units))
            width = units
        return layers

    def param_shapes(self) -> "OrderedDict[str, Tuple[int, ...]]":
        """
        Name and shape of every parameter tensor, in canonical order.
        """
        shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
        for layer in self.layers():
            if layer.kind == LayerKind.CONV1D:
                shapes[f"{layer.prefix}.kernel"] = (layer.out_dim, layer.in_dim, layer.kernel)
                shapes[f"{layer.prefix}.bias"] = (layer.out_dim,)
            elif layer.kind == LayerKind.LSTM:
                shapes[f"{layer.prefix}.w_ih"] = (4 * layer.out_dim, layer.in_dim)
                shapes[f"{layer.prefix}.w_hh"] = (4 * layer.out_dim, layer.out_dim)
                shapes[f"{layer.prefix}.bias"] = (4 * layer.out_dim,)
            else:
                shapes[f"{layer.prefix}.weight"] = (layer.out_dim, layer.in_dim)
                shapes[f"{layer.prefix}.bias"] = (layer.out_dim,)
        return shapes

    @property
    def param_count(self) -> int:
        """
        Closed-form parameter count.
        """
        return sum(
            closed_form_count(layer.kind, layer.in_dim, layer.out_dim, layer.kernel)
            for layer in self.layers()
        )

    def as_variant(self, variant: str) -> ArchSpec:
        """
        The same widths rearranged as another variant: cnn_only drops the lstm
        stack, lstm_only drops the conv stack.
        """
        conv_layers = () if variant == "lstm_only" else self.conv_layers or ArchSpec().conv_layers
        lstm_layers = () if variant == "cnn_only" else self.lstm_layers or ArchSpec().lstm_layers
        return replace(self, conv_layers=conv_layers, lstm_layers=lstm_layers, variant=variant)

    def fields(self) -> Dict[str, str]:
        """
        The architecture as canonical key/value strings.
        """
        return {
            "conv": ",".join(str(conv) for conv in self.conv_layers),
            "lstm": ",".join(str(hidden) for hidden in self.lstm_layers),
            "target_units": str(self.target_branch_units),
            "head": ",".join(str(units) for units in self.head_units),
            "variant": self.variant,
        }

    def to_text(self) -> str:
        """
        Canonical text form, one `key = value` line per field.
        """
        return "".join(f"{key} = {value}\n" for key, value in self.fields().items())

    @classmethod
    def from_fields(cls, fields: Mapping[str, str]) -> ArchSpec:
        """
        Build an ArchSpec from key/value strings; missing keys take the
        default architecture's value.
        """
        unknown = sorted(set(fields) - set(ARCH_KEYS))
        if unknown:
            raise ArchError(f"unknown architecture keys {unknown}")
        merged = {**cls().fields(), **fields}
        try:
            conv_layers = tuple(
                ConvSpec(*(int(part) for part in item.split(":")))
                for item in _items(merged["conv"])
            )
            return cls(
                conv_layers=conv_layers,
                lstm_layers=tuple(int(item) for item in _items(merged["lstm"])),
                target_branch_units=int(merged["target_units"]),
                head_units=tuple(int(item) for item in _items(merged["head"])),
                variant=merged["variant"].strip(),
            )
        except ArchError:
            raise
        except (TypeError, ValueError) as exc:
            raise ArchError(f"malformed architecture fields {dict(fields)}: {exc}") from exc

    @classmethod
    def from_text(cls, text: str) -> ArchSpec:
        """
        Parse the canonical text form.
        """
        return cls.from_fields(parse_fields(text))


def _items(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def parse_fields(text: str) -> Dict[str, str]:
    """
    Parse `key = value` lines into a dict, skipping blank lines.
    """
    fields: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ArchError(f"line {number}: expected key = value, got {line!r}")
        fields[key.strip()] = value.strip()
    return fields
