"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CDRT" | u32 version | u64 step | u32 n | n bytes UTF-8 JSON config
    u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 dtype (0 = f32) | u8 rank
                | u32 dims[rank] | f32 payload, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt

from codert.exceptions import CheckpointError
from codert.logging import get_logger
from codert.stores._atomic import atomic_write_bytes

logger = get_logger(__name__)

MAGIC = b"CDRT"
FORMAT_VERSION = 1
DTYPE_F32 = 0

_HEADER = struct.Struct("<4sIQI")
_U32 = struct.Struct("<I")
_U16 = struct.Struct("<H")
_TENSOR_META = struct.Struct("<BB")


@dataclass
class Checkpoint:
    """A training snapshot: config, step and named f32 tensors.

    Optimizer moments are stored as ordinary tensors under ``adam.m/`` and
    ``adam.v/`` prefixes.
    """

    config_json: str
    step: int
    tensors: dict[str, npt.NDArray[np.float32]] = field(default_factory=dict)
    version: int = FORMAT_VERSION


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    config_blob = ckpt.config_json.encode("utf-8")
    parts = [_HEADER.pack(MAGIC, ckpt.version, ckpt.step, len(config_blob)), config_blob]
    parts.append(_U32.pack(len(ckpt.tensors)))
    for name, tensor in ckpt.tensors.items():
        name_blob = name.encode("utf-8")
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        parts += [
            _U16.pack(len(name_blob)),
            name_blob,
            _TENSOR_META.pack(DTYPE_F32, arr.ndim),
            struct.pack(f"<{arr.ndim}I", *arr.shape),
            arr.tobytes(),
        ]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str) -> None:
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: {self.source}")
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: struct.Struct) -> tuple[int, ...]:
        return fmt.unpack(self.take(fmt.size))


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    """Parse checkpoint bytes.

    Raises:
        CheckpointError: On bad magic, unsupported version, unknown dtype or
            truncation.
    """
    reader = _Reader(data, source)
    magic, version, step, config_len = reader.unpack(_HEADER)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint (bad magic {magic!r}): {source}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}: {source}")
    try:
        config_json = reader.take(config_len).decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointError(f"config blob is not UTF-8: {source}") from e
    (count,) = reader.unpack(_U32)
    tensors: dict[str, npt.NDArray[np.float32]] = {}
    for _ in range(count):
        (name_len,) = reader.unpack(_U16)
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"tensor name is not UTF-8: {source}") from e
        dtype, rank = reader.unpack(_TENSOR_META)
        if dtype != DTYPE_F32:
            raise CheckpointError(f"tensor {name!r} has unknown dtype code {dtype}: {source}")
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(4 * size)
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    if reader.offset != len(data):
        raise CheckpointError(f"trailing bytes after tensor table: {source}")
    return Checkpoint(config_json=config_json, step=step, tensors=tensors, version=version)


def save_checkpoint(path: Path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, encode_checkpoint(ckpt))
    logger.debug("Wrote checkpoint %s (step %d, %d tensors)", path, ckpt.step, len(ckpt.tensors))


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint file.

    Raises:
        CheckpointError: If the file is missing or malformed.
    """
    try:
        data = path.read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e
    return decode_checkpoint(data, str(path))
