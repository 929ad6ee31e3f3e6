"""Overlapping crop-window planning over a latent grid.

Windows are laid out per axis at origins 0, stride, 2*stride, ...; when the
last regular origin falls short of parent-window, one extra window clamped
to the boundary is appended so every cell is covered while the window size
stays fixed (backends require fixed-size inputs). The 2-D plan is the
Cartesian product of the per-axis layouts, ordered row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .errors import GeometryError
from .grids import CodecSpec, ImageGrid, LatentGrid

__all__ = ["WindowSpec", "TilePlan", "PixelRect", "plan_tiles", "crop", "crop_image", "image_patch_for", "describe_plan"]


class WindowSpec(NamedTuple):
    """One crop window, in latent cells.

    NamedTuple rather than a dataclass: large parents at small strides
    produce hundreds of thousands of windows per plan.
    """

    index: int
    origin_x: int
    origin_y: int
    width: int
    height: int


class PixelRect(NamedTuple):
    """An image-space rectangle, in pixels."""

    origin_x: int
    origin_y: int
    width: int
    height: int


@dataclass(frozen=True)
class TilePlan:
    parent_width: int
    parent_height: int
    window_width: int
    window_height: int
    stride: int
    windows: tuple[WindowSpec, ...]

    def __len__(self) -> int:
        return len(self.windows)


def _axis_origins(parent: int, window: int, stride: int) -> list[int]:
    origins = list(range(0, parent - window + 1, stride))
    if origins[-1] != parent - window:
        origins.append(parent - window)
    return origins


def plan_tiles(
    parent_w: int,
    parent_h: int,
    win_w: int,
    win_h: int,
    stride: int,
    *,
    allow_gaps: bool = False,
) -> TilePlan:
    """Build the row-major overlapping window plan.

    Strides larger than the window leave uncovered seams that measurably
    degrade results, so they are rejected unless allow_gaps is set (an
    ablation escape hatch; downstream fusion will still flag any cell left
    uncovered).
    """
    if win_w <= 0 or win_h <= 0:
        raise GeometryError(f"window must be positive, got {win_w}x{win_h}")
    if win_w > parent_w or win_h > parent_h:
        raise GeometryError(
            f"window {win_w}x{win_h} larger than parent {parent_w}x{parent_h}"
        )
    if stride <= 0:
        raise GeometryError(f"stride must be positive, got {stride}")
    if not allow_gaps:
        # overlap is only required on axes that actually stride
        for parent, win, axis in ((parent_w, win_w, "x"), (parent_h, win_h, "y")):
            if parent > win and stride > win:
                raise GeometryError(
                    f"stride {stride} exceeds window {win} on axis {axis}; "
                    f"overlapping windows are required"
                )

    xs = _axis_origins(parent_w, win_w, stride)
    ys = _axis_origins(parent_h, win_h, stride)
    windows = tuple(
        WindowSpec(i * len(xs) + j, x, y, win_w, win_h)
        for i, y in enumerate(ys)
        for j, x in enumerate(xs)
    )
    return TilePlan(parent_w, parent_h, win_w, win_h, stride, windows)


def _check_inside(window: WindowSpec, parent_w: int, parent_h: int) -> None:
    if (
        window.origin_x < 0
        or window.origin_y < 0
        or window.origin_x + window.width > parent_w
        or window.origin_y + window.height > parent_h
    ):
        raise GeometryError(
            f"window {window.width}x{window.height} at ({window.origin_x}, {window.origin_y}) "
            f"out of bounds for parent {parent_w}x{parent_h}"
        )


def crop(parent: LatentGrid, window: WindowSpec) -> LatentGrid:
    """Copy the window region out of the parent latent."""
    _check_inside(window, parent.width, parent.height)
    region = parent.data[
        window.origin_y : window.origin_y + window.height,
        window.origin_x : window.origin_x + window.width,
    ]
    return LatentGrid(region.copy())


def crop_image(image: ImageGrid, rect: PixelRect) -> ImageGrid:
    if (
        rect.origin_x < 0
        or rect.origin_y < 0
        or rect.origin_x + rect.width > image.width
        or rect.origin_y + rect.height > image.height
    ):
        raise GeometryError(
            f"rect {rect.width}x{rect.height} at ({rect.origin_x}, {rect.origin_y}) "
            f"out of bounds for image {image.width}x{image.height}"
        )
    region = image.data[
        rect.origin_y : rect.origin_y + rect.height,
        rect.origin_x : rect.origin_x + rect.width,
    ]
    return ImageGrid(region.copy())


def image_patch_for(window: WindowSpec, codec: CodecSpec) -> PixelRect:
    """Image-space rectangle corresponding to a latent window."""
    f = codec.spatial_factor
    return PixelRect(
        origin_x=window.origin_x * f,
        origin_y=window.origin_y * f,
        width=window.width * f,
        height=window.height * f,
    )


def describe_plan(plan: TilePlan) -> str:
    """Human-readable listing of the plan for CLI debugging."""
    lines = [
        f"parent {plan.parent_width}x{plan.parent_height} latent cells, "
        f"window {plan.window_width}x{plan.window_height}, stride {plan.stride}, "
        f"{len(plan.windows)} windows"
    ]
    for w in plan.windows:
        lines.append(f"  [{w.index:3d}] origin ({w.origin_x}, {w.origin_y}) size {w.width}x{w.height}")
    return "\n".join(lines)
