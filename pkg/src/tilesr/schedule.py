"""Variance-preserving noise schedules for the denoising loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DiffusionSchedule", "make_schedule"]

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 2e-2
COSINE_OFFSET = 0.008
_MAX_BETA = 0.999


@dataclass(frozen=True)
class DiffusionSchedule:
    """Cumulative signal coefficients indexed 0..T, with index 0 fixed at 1."""

    alpha_bar: np.ndarray
    kind: str

    def __post_init__(self):
        ab = np.ascontiguousarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 2:
            raise ValueError("alpha_bar must be a 1-D array of length T+1 with T >= 1")
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be exactly 1")
        if not np.all(np.diff(ab) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if ab[-1] <= 0.0:
            raise ValueError("alpha_bar must stay positive")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def steps(self) -> int:
        return self.alpha_bar.size - 1


def make_schedule(steps: int, kind: str = "linear") -> DiffusionSchedule:
    """Build a schedule of the given kind.

    linear: per-step noise rates spaced evenly in [1e-4, 2e-2], cumulative
    product of (1 - rate). cosine: squared-cosine profile with offset
    0.008, realized through per-step rates clipped below 0.999 so the
    coefficients stay strictly positive.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if kind == "linear":
        betas = np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, steps)
    elif kind == "cosine":
        t = np.arange(steps + 1) / steps
        profile = np.cos((t + COSINE_OFFSET) / (1 + COSINE_OFFSET) * np.pi / 2) ** 2
        profile /= profile[0]
        betas = np.clip(1.0 - profile[1:] / profile[:-1], 0.0, _MAX_BETA)
    else:
        raise ValueError(f"unknown schedule kind: {kind!r}")
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return DiffusionSchedule(alpha_bar=alpha_bar, kind=kind)
