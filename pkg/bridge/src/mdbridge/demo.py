"""Demo adapters: the factory pattern, runnable without model weights.

Useful for end-to-end plumbing checks; a real deployment points the
factories at wrappers over its own model runtime instead.
"""

from __future__ import annotations

import numpy as np


class NegatingDenoiser:
    """Returns the negated latent; trivially distinguishable from echo."""

    def __init__(self, window_width=64, window_height=64, channels=4):
        self.window_width = window_width
        self.window_height = window_height
        self.channels = channels

    def denoise(self, latent, timestep, tags, guidance_scale):
        return -latent


class StatsTagger:
    """Tags the brightness and spread of whatever pixels arrive."""

    def tag(self, pixels: np.ndarray) -> str:
        mean = float(pixels.mean()) if pixels.size else 0.0
        spread = float(pixels.std()) if pixels.size else 0.0
        tags = ["bridge", "demo", "bright" if mean > 0.5 else "dark"]
        if spread > 0.2:
            tags.append("varied")
        return ", ".join(tags)


class PairDifferenceMetric:
    """Mean absolute difference between channel-stacked RGB image pairs."""

    def score(self, stacked_pair: np.ndarray) -> float:
        if stacked_pair.size % 6:
            raise ValueError("payload must be a channel-stacked RGB pair (multiple of 6 values)")
        pair = stacked_pair.reshape(-1, 6)
        return float(np.abs(pair[:, :3] - pair[:, 3:]).mean())


def denoiser():
    return NegatingDenoiser()


def tagger():
    return StatsTagger()


def metric():
    return PairDifferenceMetric()
