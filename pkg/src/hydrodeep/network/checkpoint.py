"""
Portable binary checkpoints.

Layout, all integers little-endian:

    magic      4 bytes  b"HDC1"
    version    u16
    arch_len   u32, then arch_len bytes of UTF-8 canonical arch text
               (ArchSpec.to_text() followed by a `seed = N` line)
    n_params   u32
    n_params times:
        name_len u16, name (UTF-8), rank u8, rank x u32 dims,
        prod(dims) x f64 values, row-major
"""
from __future__ import annotations

import ctypes as ct
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .arch import ArchSpec, parse_fields
from .model import Model

MAGIC = b"HDC1"
FORMAT_VERSION = 1

PathLike = Union[str, Path]


class CheckpointError(ValueError):
    """
    Base class of every checkpoint decoding error.
    """


class BadMagicError(CheckpointError):
    """
    The file does not start with the checkpoint magic bytes.
    """


class VersionMismatchError(CheckpointError):
    """
    The file was written in an unsupported format version.
    """


class TruncatedCheckpointError(CheckpointError):
    """
    The file ends before the structure it declares.
    """


class ShapeInconsistencyError(CheckpointError):
    """
    The stored tensors do not match the stored architecture.
    """


# pylint: disable=invalid-name,too-few-public-methods
class CheckpointHeader(ct.LittleEndianStructure):
    """
    Fixed-size leading header.
    """

    _pack_ = 1
    _fields_ = [("magic", ct.c_char * 4), ("version", ct.c_uint16)]


class _Reader:
    """
    Sequential reader over checkpoint bytes raising TruncatedCheckpointError
    on short reads.
    """

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        """
        Consume `size` bytes.
        """
        end = self.offset + size
        if end > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated while reading {what}: need {size} bytes at offset "
                f"{self.offset}, only {len(self.data) - self.offset} left"
            )
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple[int, ...]:
        """
        Consume and unpack a struct format.
        """
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def arch_header_text(model: Model) -> str:
    """
    The architecture text stored in a checkpoint, seed included.
    """
    return model.arch.to_text() + f"seed = {model.seed}\n"


def checkpoint_bytes(model: Model) -> bytes:
    """
    Serialize a model; identical models give identical bytes.
    """
    header = CheckpointHeader(MAGIC, FORMAT_VERSION)
    arch_text = arch_header_text(model).encode("utf8")
    chunks = [bytes(header), struct.pack("<I", len(arch_text)), arch_text]
    chunks.append(struct.pack("<I", len(model.params)))
    for name, tensor in model.params.items():
        encoded = name.encode("utf8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<B{tensor.ndim}I", tensor.ndim, *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    return b"".join(chunks)


def parse_checkpoint(data: bytes) -> Model:
    """
    Decode checkpoint bytes.
    """
    reader = _Reader(data)
    header = CheckpointHeader.from_buffer_copy(reader.take(ct.sizeof(CheckpointHeader), "header"))
    if header.magic != MAGIC:
        raise BadMagicError(f"bad magic {bytes(header.magic)!r}, expected {MAGIC!r}")
    if header.version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"checkpoint format version {header.version}, this build reads {FORMAT_VERSION}"
        )
    (arch_len,) = reader.unpack("<I", "architecture length")
    arch_raw = reader.take(arch_len, "architecture")
    try:
        fields = parse_fields(arch_raw.decode("utf8"))
        seed = int(fields.pop("seed"))
        arch = ArchSpec.from_fields(fields)
    except (KeyError, UnicodeDecodeError, ValueError) as exc:
        raise ShapeInconsistencyError(f"unreadable architecture header: {exc}") from exc
    expected = arch.param_shapes()
    (n_params,) = reader.unpack("<I", "parameter count")
    if n_params != len(expected):
        raise ShapeInconsistencyError(
            f"checkpoint holds {n_params} tensors, the architecture needs {len(expected)}"
        )
    params: Dict[str, np.ndarray] = {}
    for expected_name, expected_shape in expected.items():
        (name_len,) = reader.unpack("<H", "tensor name length")
        name = reader.take(name_len, "tensor name").decode("utf8", errors="replace")
        if name != expected_name:
            raise ShapeInconsistencyError(f"found tensor {name!r} where {expected_name!r} belongs")
        (rank,) = reader.unpack("<B", f"rank of {name}")
        dims = reader.unpack(f"<{rank}I", f"dims of {name}")
        if dims != expected_shape:
            raise ShapeInconsistencyError(
                f"tensor {name} has dims {dims}, the architecture needs {expected_shape}"
            )
        count = int(np.prod(dims))
        values = np.frombuffer(reader.take(8 * count, f"values of {name}"), dtype="<f8")
        if not np.all(np.isfinite(values)):
            raise CheckpointError(f"tensor {name} holds non-finite values")
        params[name] = values.astype(np.float64).reshape(dims)
    if reader.offset != len(data):
        raise CheckpointError(f"{len(data) - reader.offset} unexpected trailing bytes")
    return Model(arch, params, seed)


def save_checkpoint(model: Model, path: PathLike) -> Path:
    """
    Write a model checkpoint.
    """
    target = Path(path)
    target.write_bytes(checkpoint_bytes(model))
    return target


def load_checkpoint(path: PathLike) -> Model:
    """
    Read a model checkpoint; decoding errors name the file.
    """
    source = Path(path)
    try:
        return parse_checkpoint(source.read_bytes())
    except CheckpointError as exc:
        raise type(exc)(f"{source}: {exc}") from exc
