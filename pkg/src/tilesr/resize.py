"""Catmull-Rom bicubic resampling with reflected borders.

Separable 4-tap Keys kernel (a = -0.5). Sample positions use the
center-aligned convention src = (dst + 0.5) * (n_src / n_dst) - 0.5, so a
resize to the identical size reproduces the input exactly (the fractional
offset is zero and the kernel weights collapse to [0, 1, 0, 0]).
"""

from __future__ import annotations

import numpy as np

from .errors import GeometryError
from .grids import ImageGrid

__all__ = ["bicubic_resize"]


def _catmull_rom_weights(frac: np.ndarray) -> np.ndarray:
    """Kernel weights for taps at offsets -1, 0, 1, 2 from the base index."""
    t = frac
    w = np.empty((t.size, 4))
    w[:, 0] = -0.5 * t**3 + t**2 - 0.5 * t
    w[:, 1] = 1.5 * t**3 - 2.5 * t**2 + 1.0
    w[:, 2] = -1.5 * t**3 + 2.0 * t**2 + 0.5 * t
    w[:, 3] = 0.5 * t**3 - 0.5 * t**2
    return w


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(idx)
    # np.pad 'reflect' convention: period 2n-2, no edge repetition
    period = 2 * n - 2
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def _resample_axis(arr: np.ndarray, new_len: int, axis: int) -> np.ndarray:
    n = arr.shape[axis]
    src = (np.arange(new_len) + 0.5) * (n / new_len) - 0.5
    base = np.floor(src).astype(np.int64)
    weights = _catmull_rom_weights(src - base)

    moved = np.moveaxis(arr, axis, 0)
    out = np.zeros((new_len,) + moved.shape[1:])
    for tap in range(4):
        idx = _reflect_index(base + tap - 1, n)
        out += weights[:, tap].reshape((-1,) + (1,) * (moved.ndim - 1)) * moved[idx]
    return np.moveaxis(out, 0, axis)


def bicubic_resize(image: ImageGrid, new_width: int, new_height: int) -> ImageGrid:
    if new_width < 1 or new_height < 1:
        raise GeometryError(f"target size must be >= 1 per axis, got {new_width}x{new_height}")
    out = _resample_axis(image.data, new_height, axis=0)
    out = _resample_axis(out, new_width, axis=1)
    return ImageGrid(out)
