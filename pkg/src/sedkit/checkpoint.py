"""Binary checkpoint container, bit-exact round trip.

Layout (little-endian): magic "SMDN", u32 format version, u32 entry count,
then per entry: u32 name length, UTF-8 name, u8 dtype tag (0 = f32,
1 = f64), u8 rank, u32 dims, raw data.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SMDN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


def save_params(path, arrays: dict[str, np.ndarray]):
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", VERSION, len(arrays))
    for name, arr in arrays.items():
        # np.ascontiguousarray would promote rank-0 arrays to rank 1
        arr = np.asarray(arr, order="C")
        if arr.dtype not in _TAGS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb)) + nb
        buf += struct.pack("<BB", _TAGS[arr.dtype], arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += arr.astype(arr.dtype.newbyteorder("<")).tobytes()
    Path(path).write_bytes(bytes(buf))


def load_params(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off: off + nlen].decode("utf-8")
        off += nlen
        tag, rank = struct.unpack_from("<BB", raw, off)
        off += 2
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        dt = _DTYPES[tag]
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize if rank else dt.itemsize
        n_items = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(raw, dtype=dt, count=n_items, offset=off).reshape(dims)
        off += n_items * dt.itemsize
        out[name] = arr.copy()
    return out


def content_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
