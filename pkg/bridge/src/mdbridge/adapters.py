"""Model adapter contracts and dotted-path loading.

An adapter wraps one pretrained component behind a tiny synchronous
interface; the server owns all protocol concerns. Adapters are loaded from
factory references of the form "package.module:factory", where the factory
takes no arguments and returns the adapter instance. Model libraries stay
out of this package: a deployment provides its own factory module wrapping
whatever runtime it uses.
"""

from __future__ import annotations

import importlib
from typing import Protocol, runtime_checkable

import numpy as np


@runtime_checkable
class DenoiserAdapter(Protocol):
    """One reverse-diffusion step on a window-sized latent.

    Receives the latent as (height, width, channels) float32 plus the raw
    ", "-joined tag string; returns the latent at timestep-1 with the same
    shape. Shape is fixed by the declared handshake dims.
    """

    window_width: int
    window_height: int
    channels: int

    def denoise(self, latent: np.ndarray, timestep: int, tags: str, guidance_scale: float) -> np.ndarray: ...


@runtime_checkable
class TaggerAdapter(Protocol):
    """Tag extraction from raw float32 pixels.

    The payload arrives flat; the adapter knows its model's native input
    geometry and is responsible for reshaping/validating.
    """

    def tag(self, pixels: np.ndarray) -> str: ...


@runtime_checkable
class MetricAdapter(Protocol):
    """Perceptual score for an image pair stacked channel-wise."""

    def score(self, stacked_pair: np.ndarray) -> float: ...


def load_factory(reference: str):
    """Resolve "package.module:factory" and call it."""
    module_name, _, attr = reference.partition(":")
    if not module_name or not attr:
        raise ValueError(f"adapter reference {reference!r} must look like package.module:factory")
    module = importlib.import_module(module_name)
    try:
        factory = getattr(module, attr)
    except AttributeError as exc:
        raise ValueError(f"module {module_name!r} has no attribute {attr!r}") from exc
    return factory()
