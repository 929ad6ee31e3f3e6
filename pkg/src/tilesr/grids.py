"""Dense image/latent containers and the invertible space-to-depth codec.

Images are row-major (height, width, channels) float arrays clamped to
[0, 1] at construction; latents use the same layout but stay unclamped
because diffusion operates on unbounded noise. The codec trades spatial
resolution for channels losslessly, so image<->latent geometry can be
exercised without a learned autoencoder. A real autoencoder attaches via
the wire-protocol bridge instead.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import GeometryError

__all__ = [
    "ImageGrid",
    "LatentGrid",
    "CodecSpec",
    "encode",
    "decode",
    "load_image",
    "save_image",
]


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageGrid:
    """Immutable (height, width, channels) pixel field with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise GeometryError(f"image data must be (height, width, channels), got shape {arr.shape}")
        if arr.size == 0:
            raise GeometryError("image must have at least one pixel")
        if not np.all(np.isfinite(arr)):
            raise GeometryError("image contains non-finite values")
        object.__setattr__(self, "data", _freeze(np.clip(arr, 0.0, 1.0)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LatentGrid:
    """Immutable (height, width, channels) real-valued latent field."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise GeometryError(f"latent data must be (height, width, channels), got shape {arr.shape}")
        if arr.size == 0:
            raise GeometryError("latent must have at least one cell")
        if not np.all(np.isfinite(arr)):
            raise GeometryError("latent contains non-finite values")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class CodecSpec:
    """Lossless space-to-depth codec with a fixed spatial compression factor."""

    spatial_factor: int = 8

    def __post_init__(self):
        if self.spatial_factor < 1:
            raise ValueError(f"spatial_factor must be >= 1, got {self.spatial_factor}")


def encode(image: ImageGrid, codec: CodecSpec) -> LatentGrid:
    """Rearrange an image into a latent with f^2-fold channel expansion.

    Pure rearrangement: output dims are (h/f, w/f, c*f*f) and the value
    multiset is preserved exactly. Raises GeometryError when an image axis
    is not divisible by the spatial factor.
    """
    f = codec.spatial_factor
    h, w, c = image.data.shape
    if h % f != 0:
        raise GeometryError(f"image height {h} not divisible by spatial factor {f}")
    if w % f != 0:
        raise GeometryError(f"image width {w} not divisible by spatial factor {f}")
    blocks = image.data.reshape(h // f, f, w // f, f, c)
    latent = blocks.transpose(0, 2, 1, 3, 4).reshape(h // f, w // f, f * f * c)
    return LatentGrid(latent)


def decode(latent: LatentGrid, codec: CodecSpec) -> ImageGrid:
    """Exact inverse of :func:`encode`.

    Raises GeometryError when the latent channel count is not divisible
    by f^2. Values are clamped to [0, 1] by ImageGrid construction.
    """
    f = codec.spatial_factor
    h, w, c_lat = latent.data.shape
    if c_lat % (f * f) != 0:
        raise GeometryError(f"latent channel count {c_lat} not divisible by spatial factor squared {f * f}")
    c = c_lat // (f * f)
    blocks = latent.data.reshape(h, w, f, f, c)
    image = blocks.transpose(0, 2, 1, 3, 4).reshape(h * f, w * f, c)
    return ImageGrid(image)


# --- raster IO ------------------------------------------------------------
#
# PNG, 8- or 16-bit per channel, RGB or grayscale. Values normalize to
# [0, 1] on load and round half-to-even on save (numpy's default rounding).


def load_image(path: str | os.PathLike) -> ImageGrid:
    raw = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"cannot read image: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise IOError(f"unsupported sample type {raw.dtype} in {path}")
    arr = raw.astype(np.float64) / scale
    if arr.ndim == 2:
        arr = arr[:, :, None]
    elif arr.shape[2] == 4:  # drop alpha
        arr = arr[:, :, :3][:, :, ::-1]
    elif arr.shape[2] == 3:  # BGR -> RGB
        arr = arr[:, :, ::-1]
    return ImageGrid(arr)


def save_image(path: str | os.PathLike, image: ImageGrid, bit_depth: int = 8) -> None:
    """Write a PNG atomically (temp file + rename in the target directory)."""
    if bit_depth == 8:
        dtype, peak = np.uint8, 255.0
    elif bit_depth == 16:
        dtype, peak = np.uint16, 65535.0
    else:
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    arr = np.round(image.data * peak).astype(dtype)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    elif arr.shape[2] == 3:
        arr = arr[:, :, ::-1]  # RGB -> BGR
    else:
        raise ValueError(f"cannot save image with {arr.shape[2]} channels")

    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(suffix=".png", dir=directory)
    os.close(fd)
    try:
        if not cv2.imwrite(tmp, arr):
            raise IOError(f"cannot write image: {path}")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
