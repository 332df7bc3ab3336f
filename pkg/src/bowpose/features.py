"""Patch-descriptor backends and the FPFT feature-tensor file format.

The built-in backend computes a 128-dim gradient-orientation histogram per
non-overlapping patch, which keeps the whole pipeline runnable without any
neural dependency. Externally computed features (e.g. from a vision
transformer) enter through FPFT files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (BadMagic, DtypeUnsupported, SizeMismatch, TruncatedFile,
                     UnsupportedVersion)

FPFT_MAGIC = b"FPFT"
FPFT_VERSION = 1
_HEADER = struct.Struct("<4s7I")  # magic, version, gh, gw, dim, patch, dtype, reserved


@dataclass(frozen=True)
class FeatureGrid:
    """grid_h x grid_w patch descriptors of length dim over one image."""

    data: np.ndarray          # (grid_h, grid_w, dim) float
    patch_size: int
    global_desc: np.ndarray = None   # optional whole-image descriptor

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3:
            raise ValueError("data must be (grid_h, grid_w, dim)")
        if not np.isfinite(d).all():
            raise ValueError("feature grid contains NaN/Inf")
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        object.__setattr__(self, "data", d)

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def patch_center(self, row: int, col: int) -> np.ndarray:
        """Pixel coordinates of a patch center, (x, y)."""
        s = self.patch_size
        return np.array([(col + 0.5) * s, (row + 0.5) * s])


class GradientBackend:
    """Dense 4x4x8 gradient-histogram descriptors on non-overlapping patches."""

    def __init__(self, patch_size: int = 14):
        self.name = "gradient128"
        self.dim = 128
        self.patch_size = patch_size
        self.has_global = False

    def extract(self, image: np.ndarray) -> np.ndarray:
        gray = rgb_to_gray(image)
        return kernels.gradient_grid(np.ascontiguousarray(gray), self.patch_size)


def rgb_to_gray(image: np.ndarray) -> np.ndarray:
    """Luma conversion; accepts (H,W,3) or already-gray (H,W)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


def extract_grid(backend, image: np.ndarray) -> FeatureGrid:
    """Run a backend over an SxS image; S must be divisible by the patch size."""
    h, w = image.shape[:2]
    s = backend.patch_size
    if h % s != 0 or w % s != 0:
        raise SizeMismatch(f"image {w}x{h} not divisible by patch size {s}")
    data = backend.extract(image)
    return FeatureGrid(data=data, patch_size=s)


def builtin_gradient_descriptor(patch: np.ndarray) -> np.ndarray:
    """Descriptor of a single grayscale patch (the backend's unit of work)."""
    return kernels.gradient_descriptor(np.ascontiguousarray(patch, dtype=np.float64))


def write_feature_file(grid: FeatureGrid, path) -> None:
    """Write a grid (and optional global descriptor) in FPFT format."""
    payload = np.ascontiguousarray(grid.data, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(FPFT_MAGIC, FPFT_VERSION, grid.grid_h, grid.grid_w,
                             grid.dim, grid.patch_size, 0, 0))
        f.write(payload.tobytes())
        if grid.global_desc is not None:
            g = np.ascontiguousarray(grid.global_desc, dtype="<f4")
            f.write(struct.pack("<I", g.size))
            f.write(g.tobytes())


def read_feature_file(path) -> FeatureGrid:
    """Read an FPFT file; raises BadMagic / UnsupportedVersion /
    DtypeUnsupported / TruncatedFile on malformed input."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        if raw[:4] != FPFT_MAGIC:
            raise BadMagic(f"{path}: not an FPFT file")
        raise TruncatedFile(f"{path}: header incomplete")
    magic, version, gh, gw, dim, patch, dtype, _ = _HEADER.unpack_from(raw)
    if magic != FPFT_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != FPFT_VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    if dtype != 0:
        raise DtypeUnsupported(f"{path}: dtype code {dtype}")
    n = gh * gw * dim
    body = raw[_HEADER.size:]
    if len(body) < n * 4:
        raise TruncatedFile(f"{path}: payload needs {n * 4} bytes, got {len(body)}")
    data = np.frombuffer(body[:n * 4], dtype="<f4").reshape(gh, gw, dim)

    global_desc = None
    tail = body[n * 4:]
    if tail:
        if len(tail) < 4:
            raise TruncatedFile(f"{path}: dangling {len(tail)} trailing bytes")
        (dim_g,) = struct.unpack_from("<I", tail)
        if len(tail) != 4 + dim_g * 4:
            raise TruncatedFile(
                f"{path}: global block declares {dim_g} floats, {len(tail) - 4} bytes present")
        global_desc = np.frombuffer(tail[4:], dtype="<f4").astype(np.float64)
    return FeatureGrid(data=data.astype(np.float64), patch_size=patch,
                       global_desc=global_desc)
