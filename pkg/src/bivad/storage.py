"""On-disk formats: single tensors (BVT1) and named-tensor checkpoints.

BVT1 layout, all little-endian:

    magic "BVT1" | u32 rank | u32 extents[rank] | f32 data (row-major)

A checkpoint is a flat concatenation of (u32 name_len | utf-8 name | BVT1
blob) entries, read until EOF.  Entry order is preserved.
"""

from __future__ import annotations

import os
import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError, IoError

MAGIC = b"BVT1"
MAX_RANK = 8


def _as_f32(array) -> np.ndarray:
    data = array.data if hasattr(array, "data") and not isinstance(array, np.ndarray) else array
    return np.ascontiguousarray(np.asarray(data, dtype=np.float32))


def tensor_bytes(array) -> bytes:
    arr = _as_f32(array)
    if arr.ndim > MAX_RANK:
        raise FormatError(f"tensor rank {arr.ndim} exceeds format limit {MAX_RANK}")
    head = MAGIC + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + arr.astype("<f4").tobytes(order="C")


def read_tensor_stream(f: BinaryIO) -> np.ndarray:
    magic = f.read(4)
    if len(magic) < 4 or magic != MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}, expected {MAGIC!r}")
    raw = f.read(4)
    if len(raw) < 4:
        raise FormatError("truncated tensor header")
    rank = struct.unpack("<I", raw)[0]
    if rank > MAX_RANK:
        raise FormatError(f"tensor rank {rank} exceeds format limit {MAX_RANK}")
    raw = f.read(4 * rank)
    if len(raw) < 4 * rank:
        raise FormatError("truncated tensor extents")
    shape = struct.unpack(f"<{rank}I", raw) if rank else ()
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    body = f.read(4 * count)
    if len(body) < 4 * count:
        raise FormatError("truncated tensor data")
    return np.frombuffer(body, dtype="<f4").reshape(shape).astype(np.float32)


def save_tensor(path: str | os.PathLike, array) -> None:
    try:
        with open(path, "wb") as f:
            f.write(tensor_bytes(array))
    except OSError as e:
        raise IoError(f"cannot write tensor file {path}: {e}") from e


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            arr = read_tensor_stream(f)
            if f.read(1):
                raise FormatError(f"trailing bytes after tensor in {path}")
            return arr
    except OSError as e:
        raise IoError(f"cannot read tensor file {path}: {e}") from e


def save_checkpoint(path: str | os.PathLike, named: dict[str, np.ndarray]) -> None:
    try:
        with open(path, "wb") as f:
            for name, arr in named.items():
                enc = name.encode("utf-8")
                f.write(struct.pack("<I", len(enc)))
                f.write(enc)
                f.write(tensor_bytes(arr))
    except OSError as e:
        raise IoError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    entries: dict[str, np.ndarray] = {}
    try:
        size = os.path.getsize(path)
        with open(path, "rb") as f:
            while f.tell() < size:
                raw = f.read(4)
                if len(raw) < 4:
                    raise FormatError("truncated checkpoint entry header")
                nlen = struct.unpack("<I", raw)[0]
                name = f.read(nlen)
                if len(name) < nlen:
                    raise FormatError("truncated checkpoint entry name")
                try:
                    key = name.decode("utf-8")
                except UnicodeDecodeError as e:
                    raise FormatError(f"checkpoint entry name is not utf-8: {e}") from e
                if key in entries:
                    raise FormatError(f"duplicate checkpoint entry {key!r}")
                entries[key] = read_tensor_stream(f)
    except OSError as e:
        raise IoError(f"cannot read checkpoint {path}: {e}") from e
    return entries
