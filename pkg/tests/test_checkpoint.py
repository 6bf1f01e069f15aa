"""
Tests for the binary checkpoint format.
"""

import struct
from unittest import TestCase

import numpy as np
import pytest

from hydrodeep.network import (
    BadMagicError,
    CheckpointError,
    ShapeInconsistencyError,
    TruncatedCheckpointError,
    VersionMismatchError,
    build_model,
    checkpoint_bytes,
    load_checkpoint,
    parse_checkpoint,
    predict,
    save_checkpoint,
    tiny_arch,
)


class TestCheckpoint(TestCase):
    """
    Encoding and decoding a tiny model.
    """

    def setUp(self):
        self.model = build_model(tiny_arch(), 21)
        self.data = checkpoint_bytes(self.model)

    def test_header(self):
        self.assertEqual(self.data[:4], b"HDC1")
        self.assertEqual(struct.unpack("<H", self.data[4:6]), (1,))
        (arch_len,) = struct.unpack("<I", self.data[6:10])
        arch_text = self.data[10 : 10 + arch_len].decode("utf8")
        self.assertTrue(arch_text.startswith("conv = 3:2,4:2\n"))
        self.assertTrue(arch_text.endswith("seed = 21\n"))

    def test_decode(self):
        decoded = parse_checkpoint(self.data)
        self.assertEqual(decoded.arch, self.model.arch)
        self.assertEqual(decoded.seed, 21)
        self.assertEqual(list(decoded.params), list(self.model.params))
        for name, tensor in self.model.params.items():
            self.assertTrue(np.array_equal(decoded.params[name], tensor), name)

    def test_deterministic(self):
        self.assertEqual(checkpoint_bytes(build_model(tiny_arch(), 21)), self.data)
        self.assertNotEqual(checkpoint_bytes(build_model(tiny_arch(), 22)), self.data)

    def test_bad_magic(self):
        with self.assertRaises(BadMagicError):
            parse_checkpoint(b"XXXX" + self.data[4:])

    def test_version_mismatch(self):
        with self.assertRaisesRegex(VersionMismatchError, "version 2"):
            parse_checkpoint(self.data[:4] + struct.pack("<H", 2) + self.data[6:])

    def test_truncated(self):
        for size in (3, 8, 40, len(self.data) - 1):
            with self.assertRaises(TruncatedCheckpointError):
                parse_checkpoint(self.data[:size])

    def test_trailing_bytes(self):
        with self.assertRaisesRegex(CheckpointError, "trailing"):
            parse_checkpoint(self.data + b"\0")

    def test_shape_inconsistency(self):
        tampered = self.data.replace(b"target_units = 2", b"target_units = 3")
        with self.assertRaisesRegex(ShapeInconsistencyError, "target_branch.weight"):
            parse_checkpoint(tampered)

    def test_missing_seed(self):
        with self.assertRaises(ShapeInconsistencyError):
            parse_checkpoint(self.data.replace(b"seed = ", b"sees = "))

    def test_non_finite_value(self):
        tampered = self.data[:-8] + struct.pack("<d", float("nan"))
        with self.assertRaisesRegex(CheckpointError, "non-finite"):
            parse_checkpoint(tampered)

    def test_errors_are_value_errors(self):
        self.assertTrue(issubclass(TruncatedCheckpointError, ValueError))


def test_save_and_load(tmp_path, pretrained_model, small_prepared):
    path = save_checkpoint(pretrained_model, tmp_path / "model.hdc")
    loaded = load_checkpoint(path)
    samples = small_prepared.samples["validation"]
    assert np.array_equal(predict(loaded, samples), predict(pretrained_model, samples))
    assert path.read_bytes() == checkpoint_bytes(pretrained_model)


def test_load_errors_name_the_file(tmp_path):
    path = tmp_path / "broken.hdc"
    path.write_bytes(b"HDC")
    with pytest.raises(TruncatedCheckpointError, match="broken.hdc"):
        load_checkpoint(path)
    with pytest.raises(OSError):
        load_checkpoint(tmp_path / "missing.hdc")
