"""Shared binary checkpoint container.

Layout (all integers little-endian uint32):
  magic  b"ST4DCKPT"
  version
  tensor count
  per tensor, sorted by name: name length, UTF-8 name bytes, rank,
  one uint32 per dim, then raw little-endian float64 data.

Sorting by name makes the byte stream independent of dict insertion order,
which the determinism acceptance check relies on.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ST4DCKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


def save(path, tensors: dict[str, np.ndarray]):
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    off = len(MAGIC)
    version, count = struct.unpack_from("<II", buf, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(dims)
        off += 8 * n
        out[name] = arr.astype(np.float64)
    if off != len(buf):
        raise CheckpointError(f"{path}: trailing bytes")
    return out
