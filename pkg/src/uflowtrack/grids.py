"""Pixel-grid containers and the UFG1 on-disk grid format.

All image-plane quantities (masks, flow components, scale maps) live on a
2D grid indexed by (row, col), row-major, with x = column and y = row and
the origin at the top-left pixel center.  A pixel is modeled as a unit
square centered on its integer coordinates, so the image rectangle spans
x in [-0.5, width - 0.5] and y in [-0.5, height - 0.5].
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

UFG_MAGIC = b"UFG1"


class GridError(ValueError):
    """Invalid grid contents or incompatible grid shapes."""


@dataclass(frozen=True)
class ScalarGrid:
    """2D field of finite real values, shape (height, width), float64."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise GridError(f"grid must be 2D with positive dims, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise GridError("grid contains non-finite values")
        object.__setattr__(self, "values", np.ascontiguousarray(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def full(cls, height: int, width: int, value: float = 0.0) -> "ScalarGrid":
        return cls(np.full((height, width), float(value)))


@dataclass(frozen=True)
class ProbMask:
    """Per-pixel probability field; every value must lie in [0, 1]."""

    grid: ScalarGrid

    def __post_init__(self):
        v = self.grid.values
        if v.min() < 0.0 or v.max() > 1.0:
            raise GridError("probability mask has values outside [0, 1]")

    @property
    def values(self) -> np.ndarray:
        return self.grid.values

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @classmethod
    def from_values(cls, values: np.ndarray) -> "ProbMask":
        return cls(ScalarGrid(values))

    @classmethod
    def uniform(cls, height: int, width: int, value: float) -> "ProbMask":
        return cls(ScalarGrid.full(height, width, value))


@dataclass(frozen=True)
class BinaryMask:
    """Per-pixel {0, 1} field, stored as uint8."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise GridError(f"mask must be 2D with positive dims, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise GridError("binary mask has values other than 0 and 1")
        object.__setattr__(self, "values", np.ascontiguousarray(arr, dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def count(self) -> int:
        """Number of foreground pixels."""
        return int(self.values.sum())

    def is_empty(self) -> bool:
        return not self.values.any()

    def foreground_points(self) -> np.ndarray:
        """(N, 2) array of foreground pixel centers as (x, y) = (col, row)."""
        rows, cols = np.nonzero(self.values)
        return np.stack([cols.astype(np.float64), rows.astype(np.float64)], axis=1)

    def to_prob(self) -> ProbMask:
        return ProbMask(ScalarGrid(self.values.astype(np.float64)))


def threshold_mask(mask: ProbMask, t_seg: float) -> BinaryMask:
    """Binarize a probability mask: foreground where value >= t_seg."""
    if not 0.0 < t_seg < 1.0:
        raise GridError(f"threshold must be in (0, 1), got {t_seg}")
    return BinaryMask((mask.values >= t_seg).astype(np.uint8))


# ---------------------------------------------------------------------------
# UFG1 container: 4-byte magic, u32 LE width/height/channels, then
# width*height*channels little-endian float32, row-major, channel-interleaved.
# ---------------------------------------------------------------------------


def write_ufg(path: str | os.PathLike, channels: np.ndarray) -> None:
    """Write a (height, width, channels) or (height, width) array as UFG1.

    The write is atomic: data goes to a temp file in the target directory
    which is then renamed over the destination.
    """
    arr = np.asarray(channels, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise GridError(f"expected 2D or 3D array, got shape {arr.shape}")
    h, w, c = arr.shape
    header = UFG_MAGIC + struct.pack("<III", w, h, c)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header)
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_ufg(path: str | os.PathLike) -> np.ndarray:
    """Read a UFG1 file into a (height, width, channels) float64 array."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != UFG_MAGIC:
        raise GridError(f"not a UFG1 file: {path}")
    w, h, c = struct.unpack("<III", raw[4:16])
    if w < 1 or h < 1 or c < 1:
        raise GridError(f"invalid UFG1 dimensions {w}x{h}x{c} in {path}")
    expected = 16 + 4 * w * h * c
    if len(raw) != expected:
        raise GridError(f"UFG1 payload size mismatch in {path}: have {len(raw)} bytes, want {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=16).astype(np.float64)
    return data.reshape(h, w, c)


def write_mask(path: str | os.PathLike, mask: ProbMask) -> None:
    write_ufg(path, mask.values)


def read_mask(path: str | os.PathLike) -> ProbMask:
    arr = read_ufg(path)
    if arr.shape[2] != 1:
        raise GridError(f"mask file must have 1 channel, got {arr.shape[2]}")
    return ProbMask(ScalarGrid(np.clip(arr[:, :, 0], 0.0, 1.0)))
