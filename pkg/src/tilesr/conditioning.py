"""Per-window tag conditions and the extractors that produce them.

Every diffusion path gets its own tag list, extracted from the image patch
that corresponds to its latent window; a single whole-image condition is
kept alongside for the global-prompt ablation and for fallback. The bundled
mock tagger buckets simple patch statistics into tags so the full pipeline
and its tag analytics run deterministically with no pretrained model; a
real tag extractor attaches over the wire protocol.
"""

from __future__ import annotations

import csv
from collections.abc import Iterable
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import BackendError, GeometryError
from .grids import CodecSpec, ImageGrid
from .resize import bicubic_resize
from .tiling import TilePlan, crop_image, image_patch_for

__all__ = [
    "TagCondition",
    "PromptAssignment",
    "PromptExtractor",
    "MockTagger",
    "extract_tags",
    "assign_local_prompts",
    "unique_tag_count",
    "tag_analytics_row",
    "write_tag_analytics_csv",
]


@dataclass(frozen=True)
class TagCondition:
    """Ordered, deduplicated, lowercase tag list."""

    tags: tuple[str, ...] = ()

    def __post_init__(self):
        seen = set()
        cleaned = []
        for tag in self.tags:
            tag = tag.strip().lower()
            if tag and tag not in seen:
                seen.add(tag)
                cleaned.append(tag)
        object.__setattr__(self, "tags", tuple(cleaned))

    @classmethod
    def from_text(cls, text: str) -> "TagCondition":
        """Parse a ', '-joined tag string (the wire form)."""
        return cls(tuple(t for t in text.split(",")))

    def to_text(self) -> str:
        return ", ".join(self.tags)

    def __len__(self) -> int:
        return len(self.tags)


@dataclass(frozen=True)
class PromptAssignment:
    """One condition per plan window, plus the whole-image condition."""

    per_window: tuple[TagCondition, ...]
    global_condition: TagCondition


@runtime_checkable
class PromptExtractor(Protocol):
    # native input size (width, height) the extractor expects for whole
    # images, or None to take any size as-is
    native_size: tuple[int, int] | None
    # whether concurrent extract() calls are allowed
    concurrent_safe: bool

    def extract(self, image: ImageGrid) -> TagCondition: ...


# Statistic bucket edges for the mock tagger. Each axis always emits
# exactly one tag, so a patch yields four tags total.
VARIANCE_EDGES = ((1e-4, "flat"), (1e-2, "smooth"), (5e-2, "textured"), (None, "busy"))
GRADIENT_EDGES = ((2e-2, "soft"), (1e-1, "edged"), (None, "detailed"))
LUMINANCE_EDGES = ((0.35, "dark"), (0.65, "mid"), (None, "bright"))
CHANNEL_TAGS = ("reddish", "greenish", "bluish")
CHANNEL_DOMINANCE = 0.08


def _bucket(value: float, edges) -> str:
    for edge, tag in edges:
        if edge is None or value < edge:
            return tag
    raise AssertionError("unreachable")


class MockTagger:
    """Deterministic tagger over coarse per-patch statistics.

    Buckets value variance, mean gradient magnitude, dominant color
    channel, and mean luminance. Pure per-patch function, safe for
    concurrent calls.
    """

    native_size = None
    concurrent_safe = True

    def extract(self, image: ImageGrid) -> TagCondition:
        arr = image.data
        luma = arr.mean(axis=2)  # spatial statistics, not channel spread
        variance = float(luma.var())
        gx = np.abs(np.diff(luma, axis=1))
        gy = np.abs(np.diff(luma, axis=0))
        gradient = (float(gx.mean()) if gx.size else 0.0) + (float(gy.mean()) if gy.size else 0.0)
        luminance = float(luma.mean())

        channel_tag = "neutral"
        if image.channels == 3:
            means = arr.mean(axis=(0, 1))
            lead = int(np.argmax(means))
            others = [m for i, m in enumerate(means) if i != lead]
            if means[lead] - float(np.mean(others)) > CHANNEL_DOMINANCE:
                channel_tag = CHANNEL_TAGS[lead]

        return TagCondition(
            (
                _bucket(variance, VARIANCE_EDGES),
                _bucket(gradient / 2.0, GRADIENT_EDGES),
                channel_tag,
                _bucket(luminance, LUMINANCE_EDGES),
            )
        )


def extract_tags(extractor: PromptExtractor, patch: ImageGrid) -> TagCondition:
    """Run the extractor on one patch; result is normalized and deduplicated."""
    condition = extractor.extract(patch)
    if not isinstance(condition, TagCondition):
        condition = TagCondition(tuple(condition))
    return condition


def assign_local_prompts(
    extractor: PromptExtractor,
    image: ImageGrid,
    plan: TilePlan,
    codec: CodecSpec,
) -> PromptAssignment:
    """Extract one condition per window patch plus the whole-image condition.

    The whole image is resized to the extractor's native input size (when
    it declares one) before global extraction. A window whose extraction
    comes back empty falls back to the global condition rather than
    running that diffusion path unconditioned.
    """
    f = codec.spatial_factor
    if image.width != plan.parent_width * f or image.height != plan.parent_height * f:
        raise GeometryError(
            f"image {image.width}x{image.height} does not match latent plan "
            f"{plan.parent_width}x{plan.parent_height} at spatial factor {f}"
        )

    global_input = image
    if extractor.native_size is not None:
        nw, nh = extractor.native_size
        if (image.width, image.height) != (nw, nh):
            global_input = bicubic_resize(image, nw, nh)
    try:
        global_condition = extract_tags(extractor, global_input)
    except Exception as exc:
        raise BackendError(f"global tag extraction failed: {exc}") from exc

    per_window = []
    for window in plan.windows:
        patch = crop_image(image, image_patch_for(window, codec))
        try:
            condition = extract_tags(extractor, patch)
        except Exception as exc:
            raise BackendError(f"tag extraction failed for window {window.index}: {exc}") from exc
        per_window.append(condition if len(condition) else global_condition)
    return PromptAssignment(per_window=tuple(per_window), global_condition=global_condition)


def unique_tag_count(assignment: PromptAssignment) -> int:
    """Number of distinct tags across all windows; shared tags count once."""
    tags: set[str] = set()
    for condition in assignment.per_window:
        tags.update(condition.tags)
    return len(tags)


def tag_analytics_row(image_id: str, assignment: PromptAssignment) -> dict:
    return {
        "image_id": image_id,
        "global_tags": len(assignment.global_condition),
        "local_unique_tags": unique_tag_count(assignment),
        "window_tag_counts": " ".join(str(len(c)) for c in assignment.per_window),
    }


def write_tag_analytics_csv(path, rows: Iterable[dict], *, bucket_width: int = 5) -> None:
    """One row per image plus a trailing histogram of local unique counts.

    Histogram buckets are appended as '#'-prefixed comment lines so the
    row section stays machine-readable.
    """
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["image_id", "global_tags", "local_unique_tags", "window_tag_counts", "error"],
            restval="",
        )
        writer.writeheader()
        writer.writerows(rows)
        counts = [r["local_unique_tags"] for r in rows if r.get("local_unique_tags", "") != ""]
        if counts:
            top = (max(counts) // bucket_width + 1) * bucket_width
            for lo in range(0, top, bucket_width):
                n = sum(1 for c in counts if lo <= c < lo + bucket_width)
                fh.write(f"# local_unique [{lo},{lo + bucket_width}): {n}\n")
