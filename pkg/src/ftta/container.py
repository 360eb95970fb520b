"""Flat binary container for named float64 tensors.

Layout: magic ``FTTA``, version u32, tensor count u32, then per tensor a
name (u16 length + UTF-8 bytes), rank u8, one u32 extent per axis, and the
row-major float64 payload. All integers and floats are little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FTTA"
VERSION = 1


class ContainerError(ValueError):
    """Malformed tensor container file."""


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array, dtype=np.float64)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ContainerError(f"tensor name too long: {name!r}")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    offset = 4

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise ContainerError(f"{path}: truncated at byte {offset}")
        piece = blob[offset: offset + n]
        offset += n
        return piece

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n_items = int(np.prod(shape)) if rank else 1
        payload = take(8 * n_items)
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    if offset != len(blob):
        raise ContainerError(f"{path}: {len(blob) - offset} trailing bytes")
    return tensors
