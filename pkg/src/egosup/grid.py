"""Dense 2-D grid primitives.

Heat maps are plain ``float64`` numpy arrays of shape ``(height, width)``
(row-major, so ``m[row, col]``).  A pixel ``(row, col)`` belongs to a box when
its center ``(col + 0.5, row + 0.5)`` lies in ``[x, x + w) x [y, y + h)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True)
class GridDims:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise InvalidInput(f"grid dims must be integers, got {self.width}x{self.height}")
        if self.width < 1 or self.height < 1:
            raise InvalidInput(f"grid dims must be positive, got {self.width}x{self.height}")

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def size(self):
        return self.width * self.height


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left ``(x, y)``, width ``w``, height ``h``, confidence ``c``."""

    x: float
    y: float
    w: float
    h: float
    c: float = 1.0

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h, self.c)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInput(f"box has non-finite field: {vals}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidInput(f"box needs w > 0 and h > 0, got w={self.w}, h={self.h}")
        if not 0.0 <= self.c <= 1.0:
            raise InvalidInput(f"box confidence must lie in [0, 1], got {self.c}")

    @property
    def center(self):
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def as_list(self):
        return [self.x, self.y, self.w, self.h, self.c]


def zeros(dims: GridDims) -> np.ndarray:
    return np.zeros(dims.shape, dtype=np.float64)


def _axis_span(start, extent, n):
    centers = np.arange(n) + 0.5
    inside = np.flatnonzero((centers >= start) & (centers < start + extent))
    if inside.size == 0:
        return slice(0, 0)
    return slice(int(inside[0]), int(inside[-1]) + 1)


def box_slices(box: BBox, dims: GridDims):
    """Row and column slices of the pixels whose centers fall inside ``box``."""
    return _axis_span(box.y, box.h, dims.height), _axis_span(box.x, box.w, dims.width)


def box_mask(box: BBox, dims: GridDims) -> np.ndarray:
    mask = np.zeros(dims.shape, dtype=bool)
    mask[box_slices(box, dims)] = True
    return mask


def rasterize_box(box: BBox, v: float, dims: GridDims) -> np.ndarray:
    if not math.isfinite(v):
        raise InvalidInput(f"rasterized value must be finite, got {v}")
    out = zeros(dims)
    out[box_slices(box, dims)] = v
    return out


def _check_map(m, dims=None):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidInput(f"heat map must be 2-D, got shape {m.shape}")
    if dims is not None and m.shape != dims.shape:
        raise InvalidInput(f"heat map shape {m.shape} does not match grid {dims.shape}")
    return m


def elementwise_mul(a, b) -> np.ndarray:
    a, b = _check_map(a), _check_map(b)
    if a.shape != b.shape:
        raise InvalidInput(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def accumulate(maps, dims: GridDims) -> np.ndarray:
    """Pixelwise sum, in list order. An empty list gives the zero map."""
    out = zeros(dims)
    for m in maps:
        out += _check_map(m, dims)
    return out


def normalize_max(m) -> np.ndarray:
    m = _check_map(m)
    if np.any(m < 0):
        raise InvalidInput("normalize_max needs non-negative values")
    peak = m.max()
    if peak > 0:
        return m / peak
    return m.copy()


def area_resize(m, dims: GridDims) -> np.ndarray:
    """Resample by exact area averaging (each output pixel is the mean of the
    input area it covers).  Works for channel-first stacks too."""
    m = np.asarray(m, dtype=np.float64)
    rows = _area_weights(m.shape[-2], dims.height)
    cols = _area_weights(m.shape[-1], dims.width)
    return rows @ m @ cols.T


def _area_weights(n_in, n_out):
    # w[i, j] = overlap of output cell i with input cell j, rows normalized
    edges_out = np.arange(n_out + 1) * (n_in / n_out)
    lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(n_in)[None, :] + 1)
    w = np.clip(hi - lo, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def upsample_nearest(m, dims: GridDims) -> np.ndarray:
    """Each output pixel takes the input pixel that contains its center."""
    m = _check_map(m)
    h_in, w_in = m.shape
    r = np.minimum(((np.arange(dims.height) + 0.5) * h_in / dims.height).astype(int), h_in - 1)
    c = np.minimum(((np.arange(dims.width) + 0.5) * w_in / dims.width).astype(int), w_in - 1)
    return m[np.ix_(r, c)]
