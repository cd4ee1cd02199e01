"""Frame and depth-map files: binary PPM (P6, 8-bit) for bit-exact frame
comparison, and a raw little-endian float32 grid for depth maps."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

DEPTH_MAGIC = b"ST4DDPTH"    # 8 bytes; header is exactly 16 bytes


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, img: np.ndarray):
    """img is [3,H,W] float in [0,1]."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected [3,H,W], got {img.shape}")
    h, w = img.shape[1:]
    data = to_uint8(img).transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + data)


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if not buf.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM")
    # header: magic, dimensions, maxval, separated by whitespace
    fields, off = [], 2
    while len(fields) < 3:
        while off < len(buf) and buf[off:off + 1].isspace():
            off += 1
        if buf[off:off + 1] == b"#":
            while buf[off:off + 1] != b"\n":
                off += 1
            continue
        start = off
        while off < len(buf) and not buf[off:off + 1].isspace():
            off += 1
        fields.append(int(buf[start:off]))
    off += 1
    w, h, maxval = fields
    raw = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=off)
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / maxval


def write_depth(path, depth: np.ndarray):
    if depth.ndim != 2:
        raise ValueError(f"expected [H,W] depth, got {depth.shape}")
    h, w = depth.shape
    header = DEPTH_MAGIC + struct.pack("<II", w, h)
    Path(path).write_bytes(header + depth.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:8] != DEPTH_MAGIC:
        raise ValueError(f"{path}: bad depth magic")
    w, h = struct.unpack_from("<II", buf, 8)
    return np.frombuffer(buf, dtype="<f4", count=w * h, offset=16).reshape(
        h, w).astype(np.float64)
