"""Tests for the binary checkpoint format."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from codert.exceptions import CheckpointError
from codert.stores.checkpoint_store import (
    MAGIC,
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def checkpoint(rng: np.random.Generator) -> Checkpoint:
    return Checkpoint(
        config_json='{"mode": "baseline"}',
        step=42,
        tensors={
            "student_encoder/lstm0.w_x": rng.normal(size=(8, 3)).astype(np.float32),
            "student_encoder/proj.b": rng.normal(size=5).astype(np.float32),
            "adam.m/student_encoder/proj.b": np.zeros(5, dtype=np.float32),
        },
    )


def test_save_and_load(tmp_path: Path, checkpoint: Checkpoint):
    """Test tensors, step and config survive a save and load."""
    path = tmp_path / "best.ckpt"
    save_checkpoint(path, checkpoint)

    loaded = load_checkpoint(path)

    assert loaded.step == 42
    assert loaded.config_json == checkpoint.config_json
    assert list(loaded.tensors) == list(checkpoint.tensors)
    for name, tensor in checkpoint.tensors.items():
        assert loaded.tensors[name].dtype == np.float32
        assert np.array_equal(loaded.tensors[name], tensor)


def test_resave_is_byte_identical(tmp_path: Path, checkpoint: Checkpoint):
    """Test saving a loaded checkpoint reproduces the original file exactly."""
    first = tmp_path / "first.ckpt"
    second = tmp_path / "second.ckpt"
    save_checkpoint(first, checkpoint)

    save_checkpoint(second, load_checkpoint(first))

    assert second.read_bytes() == first.read_bytes()


def test_header_layout(checkpoint: Checkpoint):
    """Test the fixed header is magic, version, step and config length."""
    data = encode_checkpoint(checkpoint)
    magic, version, step, config_len = struct.unpack_from("<4sIQI", data)
    assert magic == MAGIC
    assert version == 1
    assert step == 42
    assert config_len == len(checkpoint.config_json.encode())


def test_truncated_file_is_rejected(checkpoint: Checkpoint):
    """Test a file cut short raises CheckpointError."""
    data = encode_checkpoint(checkpoint)
    with pytest.raises(CheckpointError, match="truncated"):
        decode_checkpoint(data[:-3])


def test_trailing_bytes_are_rejected(checkpoint: Checkpoint):
    """Test bytes after the tensor table raise CheckpointError."""
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(encode_checkpoint(checkpoint) + b"\x00")


def test_bad_magic_is_rejected(checkpoint: Checkpoint):
    """Test a foreign file is not mistaken for a checkpoint."""
    data = b"XXXX" + encode_checkpoint(checkpoint)[4:]
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(data)


def test_unknown_version_is_rejected(checkpoint: Checkpoint):
    """Test an unsupported format version raises CheckpointError."""
    checkpoint.version = 9
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(encode_checkpoint(checkpoint))


def test_non_utf8_tensor_name_is_rejected(checkpoint: Checkpoint):
    """Test a corrupt tensor name raises CheckpointError, not UnicodeDecodeError."""
    data = bytearray(encode_checkpoint(checkpoint))
    data[data.index(b"student_encoder/lstm0")] = 0xFF
    with pytest.raises(CheckpointError, match="not UTF-8"):
        decode_checkpoint(bytes(data))


def test_missing_file(tmp_path: Path):
    """Test a missing path raises CheckpointError."""
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "absent.ckpt")
