"""Binary checkpoints: a flat map of named float64 tensors.

Layout: magic b"LSTX1", then a uint32 record count, then per record a
uint32 name length, the UTF-8 name, a uint32 rank, rank uint32 dims, and
the row-major float64 payload. All integers and floats little-endian.
The same container serves classifier and transfer-model checkpoints.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"LSTX1"


class CheckpointFormatError(ValueError):
    pass


def save_params(path, params: dict) -> None:
    """Write name -> array (or Tensor) in insertion order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            # asarray keeps 0-d arrays 0-d where ascontiguousarray would not
            arr = np.asarray(getattr(value, "data", value), dtype="<f8", order="C")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path) -> dict:
    blob = Path(path).read_bytes()
    if blob[:5] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {blob[:5]!r}, expected {MAGIC!r}")
    offset = 5

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise CheckpointFormatError(f"{path}: truncated checkpoint")
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    (count,) = take("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}I") if rank else ()
        n = int(np.prod(shape)) if shape else 1
        size = n * 8
        if offset + size > len(blob):
            raise CheckpointFormatError(f"{path}: truncated tensor data for {name}")
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += size
        params[name] = arr.astype(np.float64)
    if offset != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return params
