"""Grid file formats.

DFOG layout (little endian): 4-byte magic ``b"DFOG"``, then uint32 height,
width and channels, then H*W*C float32 values in row-major (H, W, C) order.
Images are also exchanged as binary PGM (1 channel) or PPM (3 channels) with
maxval 255, mapped to [0, 1].
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError
from .grids import Grid

MAGIC = b"DFOG"
_HEADER = struct.Struct("<4sIII")


def write_dfog(grid: Grid, path) -> None:
    H, W, C = grid.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, H, W, C))
        fh.write(np.ascontiguousarray(grid.data, dtype="<f4").tobytes())


def read_dfog(path, kind: str = "feature") -> Grid:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, H, W, C = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * H * W * C
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(H, W, C)
    try:
        return Grid(data.astype(np.float64), kind)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_image(grid: Grid, path) -> None:
    """Write a 1- or 3-channel grid with values in [0, 1] as PGM/PPM."""
    if grid.channels not in (1, 3):
        raise ValueError(f"PGM/PPM needs 1 or 3 channels, got {grid.channels}")
    data = np.clip(np.rint(grid.data * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if grid.channels == 1 else "RGB"
    Image.fromarray(data[:, :, 0] if grid.channels == 1 else data, mode).save(path, format="PPM")


def read_image(path) -> Grid:
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            data = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return Grid(data, "image")
