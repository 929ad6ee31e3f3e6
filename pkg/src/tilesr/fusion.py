"""Merge per-window latents back into the parent grid by averaging overlaps.

Each deposit adds window values into a running sum and bumps a per-cell
weight; finalize divides. Uniform weights reproduce the plain average of
overlapping regions; a per-cell weight array can be passed for feathered
blending but defaults stay uniform so the averaging semantics are what
gets tested. Accumulation is float64 throughout, which keeps results
permutation-invariant to 1e-12.
"""

from __future__ import annotations

import numpy as np

from .errors import GeometryError
from .grids import LatentGrid
from .tiling import WindowSpec

__all__ = ["FusionAccumulator"]


class FusionAccumulator:
    """Sum-and-weight buffers over the parent latent dimensions."""

    def __init__(self, width: int, height: int, channels: int):
        if width < 1 or height < 1 or channels < 1:
            raise GeometryError(f"accumulator dims must be positive, got {width}x{height}x{channels}")
        self.width = width
        self.height = height
        self.channels = channels
        self.sum = np.zeros((height, width, channels))
        self.weight = np.zeros((height, width))

    def deposit(
        self,
        window: WindowSpec,
        values: LatentGrid | np.ndarray,
        cell_weight: np.ndarray | float = 1.0,
    ) -> "FusionAccumulator":
        data = values.data if isinstance(values, LatentGrid) else np.asarray(values, dtype=np.float64)
        if data.shape != (window.height, window.width, self.channels):
            raise GeometryError(
                f"values shape {data.shape} does not match window "
                f"{window.height}x{window.width}x{self.channels}"
            )
        if (
            window.origin_x < 0
            or window.origin_y < 0
            or window.origin_x + window.width > self.width
            or window.origin_y + window.height > self.height
        ):
            raise GeometryError(
                f"window at ({window.origin_x}, {window.origin_y}) size "
                f"{window.width}x{window.height} out of bounds for {self.width}x{self.height}"
            )
        ys = slice(window.origin_y, window.origin_y + window.height)
        xs = slice(window.origin_x, window.origin_x + window.width)
        w = np.asarray(cell_weight, dtype=np.float64)
        if w.ndim == 0:
            self.sum[ys, xs] += w * data
            self.weight[ys, xs] += w
        else:
            if w.shape != (window.height, window.width):
                raise GeometryError(f"cell_weight shape {w.shape} does not match window")
            self.sum[ys, xs] += w[:, :, None] * data
            self.weight[ys, xs] += w
        return self

    def finalize(self) -> LatentGrid:
        """Per-cell weighted average; every cell must have been covered."""
        uncovered = self.weight == 0.0
        if uncovered.any():
            y, x = np.argwhere(uncovered)[0]
            raise GeometryError(f"cell ({int(x)}, {int(y)}) covered by no window")
        return LatentGrid(self.sum / self.weight[:, :, None])
