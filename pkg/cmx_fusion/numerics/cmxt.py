"""Reader and writer for the CMXT v1 tensor container."""

from __future__ import annotations

import math
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from collections.abc import Iterable

    from _typeshed import StrPath

    from cmx_fusion.types import Tensor

MAGIC = b"CMXT"
VERSION = 1
MAX_RANK = 4
HEADER_SIZE = 6


class CmxtError(ValueError):
    """Malformed CMXT data."""


def encode(tensor: Tensor) -> bytes:
    """Serialize one tensor: magic, version, rank, u32 extents, f32 values (little endian)."""
    arr = np.asarray(tensor)
    if not 1 <= arr.ndim <= MAX_RANK:
        raise CmxtError(f"rank must be between 1 and {MAX_RANK}, got {arr.ndim}")
    if 0 in arr.shape:
        raise CmxtError(f"extents must be positive, got {arr.shape}")
    header = MAGIC + bytes([VERSION, arr.ndim]) + np.asarray(arr.shape, dtype="<u4").tobytes()
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_from(data: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Parse one tensor starting at `offset`; return it and the offset after it."""
    if len(data) - offset < HEADER_SIZE:
        raise CmxtError("truncated header")
    if data[offset : offset + 4] != MAGIC:
        raise CmxtError(f"bad magic {data[offset : offset + 4]!r}")
    version, rank = data[offset + 4], data[offset + 5]
    if version != VERSION:
        raise CmxtError(f"unsupported version {version}")
    if not 1 <= rank <= MAX_RANK:
        raise CmxtError(f"invalid rank {rank}")
    start = offset + HEADER_SIZE
    stop = start + 4 * rank
    if len(data) < stop:
        raise CmxtError("truncated extents")
    shape = tuple(int(e) for e in np.frombuffer(data[start:stop], dtype="<u4"))
    if 0 in shape:
        raise CmxtError(f"extents must be positive, got {shape}")
    end = stop + 4 * math.prod(shape)
    if len(data) < end:
        raise CmxtError(f"expected {math.prod(shape)} values for shape {shape}")
    values = np.frombuffer(data[stop:end], dtype="<f4").astype(np.float32).reshape(shape)
    return values, end


def decode(data: bytes) -> Tensor:
    """Parse exactly one tensor."""
    tensor, end = decode_from(data)
    if end != len(data):
        raise CmxtError(f"{len(data) - end} trailing bytes")
    return tensor


def decode_many(data: bytes) -> list[Tensor]:
    """Parse a stream of concatenated tensors."""
    tensors: list[Tensor] = []
    offset = 0
    while offset < len(data):
        tensor, offset = decode_from(data, offset)
        tensors.append(tensor)
    return tensors


def save(path: StrPath, tensor: Tensor) -> None:
    """Write one tensor."""
    Path(path).write_bytes(encode(tensor))


def load(path: StrPath) -> Tensor:
    """Read one tensor."""
    return decode(Path(path).read_bytes())


def save_many(path: StrPath, tensors: Iterable[Tensor]) -> None:
    """Write an ordered tensor sequence."""
    Path(path).write_bytes(b"".join(encode(t) for t in tensors))


def load_many(path: StrPath) -> list[Tensor]:
    """Read an ordered tensor sequence."""
    return decode_many(Path(path).read_bytes())
