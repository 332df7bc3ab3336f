"""Minimal FPFT writer/reader.

Binary layout, all little-endian: magic "FPFT", version u32 = 1, grid_h u32,
grid_w u32, dim u32, patch_size u32, dtype u32 (0 = f32), reserved u32 = 0,
then grid_h * grid_w * dim f32 values in row-major patch order. An optional
trailing global-descriptor block is dim_g u32 followed by dim_g f32 values.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FPFT"
VERSION = 1
_HEADER = struct.Struct("<4s7I")


class FpftError(Exception):
    pass


def write_fpft(data: np.ndarray, patch_size: int, path,
               global_desc: np.ndarray = None) -> None:
    """data: (grid_h, grid_w, dim) array, stored as f32."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 3:
        raise ValueError("data must be (grid_h, grid_w, dim)")
    gh, gw, dim = data.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, gh, gw, dim, patch_size, 0, 0))
        f.write(data.tobytes())
        if global_desc is not None:
            g = np.ascontiguousarray(global_desc, dtype="<f4")
            f.write(struct.pack("<I", g.size))
            f.write(g.tobytes())


def read_fpft(path):
    """Returns (data (gh, gw, dim) f32, patch_size, global_desc or None)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise FpftError(f"{path}: not an FPFT file")
    _, version, gh, gw, dim, patch, dtype, _ = _HEADER.unpack_from(raw)
    if version != VERSION or dtype != 0:
        raise FpftError(f"{path}: unsupported version/dtype")
    n = gh * gw * dim
    body = raw[_HEADER.size:]
    if len(body) < n * 4:
        raise FpftError(f"{path}: truncated payload")
    data = np.frombuffer(body[:n * 4], dtype="<f4").reshape(gh, gw, dim)
    tail = body[n * 4:]
    global_desc = None
    if tail:
        (dim_g,) = struct.unpack_from("<I", tail)
        if len(tail) != 4 + dim_g * 4:
            raise FpftError(f"{path}: malformed global block")
        global_desc = np.frombuffer(tail[4:], dtype="<f4")
    return data, patch, global_desc
