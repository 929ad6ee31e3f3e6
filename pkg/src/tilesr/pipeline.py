"""The full tiled super-resolution run: upsample, extract per-window
prompts once, then walk the timesteps denoising every window from the same
latent snapshot and fusing the results, and finally decode.

Within one timestep the windows are independent and may be denoised by a
thread pool; deposits happen in plan order by default so a run is
bit-reproducible for any worker count.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field

import numpy as np

from .backends import estimate_x0
from .conditioning import PromptAssignment, PromptExtractor, assign_local_prompts, unique_tag_count
from .errors import BackendError, GeometryError
from .fusion import FusionAccumulator
from .grids import CodecSpec, ImageGrid, LatentGrid, decode, encode
from .metrics import psnr
from .resize import bicubic_resize
from .schedule import make_schedule
from .tiling import TilePlan, plan_tiles

__all__ = ["PipelineConfig", "RunReport", "seeded_noise", "run"]


def _finite(value):
    """Replace non-finite floats with strings so reports stay valid JSON."""
    if isinstance(value, float) and not np.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    return value


@dataclass(frozen=True)
class PipelineConfig:
    window: int = 64
    stride: int = 32
    scale: int = 4
    steps: int = 50
    schedule_kind: str = "linear"
    sampler: str = "deterministic"  # or "stochastic"
    eta: float = 1.0  # stochastic sampler only
    guidance_scale: float = 5.5
    seed: int = 0
    prompt_mode: str = "local"  # or "global"
    workers: int = 1
    canonical_order: bool = True
    spatial_factor: int = 8
    init_from_lr: bool = False
    allow_gapped_stride: bool = False

    def __post_init__(self):
        if self.stride > self.window and not self.allow_gapped_stride:
            raise ValueError(f"stride {self.stride} exceeds window {self.window}")
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.sampler not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown sampler: {self.sampler!r}")
        if self.prompt_mode not in ("local", "global"):
            raise ValueError(f"unknown prompt mode: {self.prompt_mode!r}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass
class RunReport:
    config: dict
    plan: dict
    prompt_stats: dict
    step_seconds: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)
    output_size: tuple[int, int] = (0, 0)
    total_seconds: float = 0.0

    def to_json(self) -> str:
        payload = asdict(self)
        payload["output_size"] = list(self.output_size)
        return json.dumps(_finite(payload), indent=2)

    def trajectory_csv(self) -> str:
        lines = ["step,seconds,x0_max_abs_err,psnr"]
        for entry in self.trajectory:
            lines.append(
                "{step},{seconds:.6f},{x0},{p}".format(
                    step=entry["step"],
                    seconds=entry["seconds"],
                    x0="" if entry.get("x0_max_abs_err") is None else f"{entry['x0_max_abs_err']:.12g}",
                    p="" if entry.get("psnr") is None else f"{entry['psnr']:.6f}",
                )
            )
        return "\n".join(lines) + "\n"


def seeded_noise(width: int, height: int, channels: int, seed: int) -> LatentGrid:
    """Standard-normal field from the Philox counter-based generator.

    The same seed yields the same field on every platform; the field is
    drawn in one pass so worker counts cannot reorder it.
    """
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    return LatentGrid(gen.standard_normal((height, width, channels)))


def _step_noise_generator(seed: int) -> np.random.Generator:
    # separate stream from the init noise so the two never overlap
    step_ss = np.random.SeedSequence(seed).spawn(2)[1]
    return np.random.Generator(np.random.Philox(step_ss))


def _plan_summary(plan: TilePlan) -> dict:
    return {
        "parent": [plan.parent_width, plan.parent_height],
        "window": [plan.window_width, plan.window_height],
        "stride": plan.stride,
        "windows": len(plan.windows),
        "origins": [[w.origin_x, w.origin_y] for w in plan.windows],
    }


def _prompt_stats(assignment: PromptAssignment, mode: str) -> dict:
    return {
        "mode": mode,
        "global_tag_count": len(assignment.global_condition),
        "local_unique_tag_count": unique_tag_count(assignment),
        "per_window_tag_counts": [len(c) for c in assignment.per_window],
        "global_tags": assignment.global_condition.to_text(),
    }


def run(
    lr_image: ImageGrid,
    config: PipelineConfig,
    backend,
    extractor: PromptExtractor,
    codec: CodecSpec,
    reference: ImageGrid | None = None,
) -> tuple[ImageGrid, RunReport]:
    """Super-resolve one image; returns the output and a run report.

    When a reference image is supplied and the backend exposes a noise
    prediction, the report carries per-step clean-estimate error and PSNR
    trajectories against it.
    """
    started = time.perf_counter()
    f = codec.spatial_factor
    hr_w, hr_h = lr_image.width * config.scale, lr_image.height * config.scale
    if hr_w % f != 0 or hr_h % f != 0:
        raise GeometryError(
            f"target size {hr_w}x{hr_h} not divisible by spatial factor {f}"
        )
    latent_w, latent_h = hr_w // f, hr_h // f
    if latent_w < config.window or latent_h < config.window:
        raise GeometryError(
            f"latent {latent_w}x{latent_h} smaller than window {config.window}"
        )
    if reference is not None and (reference.width, reference.height) != (hr_w, hr_h):
        raise GeometryError(
            f"reference {reference.width}x{reference.height} does not match output {hr_w}x{hr_h}"
        )

    upsampled = bicubic_resize(lr_image, hr_w, hr_h)
    plan = plan_tiles(
        latent_w, latent_h, config.window, config.window, config.stride,
        allow_gaps=config.allow_gapped_stride,
    )
    channels = lr_image.channels * f * f

    declared = getattr(backend, "window_size", None)
    if declared is not None and declared != (config.window, config.window):
        raise GeometryError(
            f"backend window {declared[0]}x{declared[1]} does not match plan window {config.window}"
        )
    declared_c = getattr(backend, "channels", None)
    if declared_c is not None and declared_c != channels:
        raise GeometryError(
            f"backend declares {declared_c} latent channels, pipeline produces {channels}"
        )

    assignment = assign_local_prompts(extractor, upsampled, plan, codec)
    if config.prompt_mode == "global":
        conditions = [assignment.global_condition] * len(plan.windows)
    else:
        conditions = list(assignment.per_window)

    schedule = make_schedule(config.steps, config.schedule_kind)
    current = seeded_noise(latent_w, latent_h, channels, config.seed).data
    if config.init_from_lr:
        ab_start = schedule.alpha_bar[schedule.steps]
        current = np.sqrt(ab_start) * encode(upsampled, codec).data + np.sqrt(1.0 - ab_start) * current

    eta = config.eta if config.sampler == "stochastic" else 0.0
    step_gen = _step_noise_generator(config.seed) if eta != 0.0 else None
    track_x0 = reference is not None and hasattr(backend, "epsilon")
    reference_latent = encode(reference, codec).data if track_x0 else None

    report = RunReport(
        config=asdict(config),
        plan=_plan_summary(plan),
        prompt_stats=_prompt_stats(assignment, config.prompt_mode),
    )

    def window_view(grid: np.ndarray, w):
        return grid[w.origin_y : w.origin_y + w.height, w.origin_x : w.origin_x + w.width]

    def denoise_window(snapshot: np.ndarray, t: int, index: int, step_noise: np.ndarray | None):
        w = plan.windows[index]
        latent = window_view(snapshot, w)
        noise = window_view(step_noise, w) if step_noise is not None else None
        try:
            out = backend.step(
                latent,
                t,
                condition=conditions[index],
                guidance_scale=config.guidance_scale,
                schedule=schedule,
                window=w,
                noise=noise,
            )
            x0 = None
            if track_x0:
                eps = backend.epsilon(
                    latent, t, condition=conditions[index],
                    guidance_scale=config.guidance_scale, schedule=schedule, window=w,
                )
                x0 = estimate_x0(latent, eps, t, schedule)
            return out, x0
        except GeometryError:
            raise
        except Exception as exc:
            raise BackendError(f"backend failed at timestep {t}, window {index}: {exc}") from exc

    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for t in range(schedule.steps, 0, -1):
            step_started = time.perf_counter()
            step_noise = (
                step_gen.standard_normal((latent_h, latent_w, channels)) if step_gen is not None else None
            )
            snapshot = current
            indices = range(len(plan.windows))
            if pool is None:
                deposits = ((i, *denoise_window(snapshot, t, i, step_noise)) for i in indices)
            elif config.canonical_order:
                # plan-order deposits: bit-identical for any worker count
                results = list(pool.map(lambda i: denoise_window(snapshot, t, i, step_noise), indices))
                deposits = ((i, out, x0) for i, (out, x0) in zip(indices, results))
            else:
                # arrival-order deposits: equal to canonical within rounding
                futures = {pool.submit(denoise_window, snapshot, t, i, step_noise): i for i in indices}
                deposits = ((futures[f], *f.result()) for f in as_completed(futures))

            acc = FusionAccumulator(latent_w, latent_h, channels)
            x0_acc = FusionAccumulator(latent_w, latent_h, channels) if track_x0 else None
            for i, out, x0 in deposits:
                acc.deposit(plan.windows[i], out)
                if x0_acc is not None:
                    x0_acc.deposit(plan.windows[i], x0)
            current = acc.finalize().data

            entry = {"step": t, "seconds": time.perf_counter() - step_started}
            if x0_acc is not None:
                x0_grid = x0_acc.finalize()
                entry["x0_max_abs_err"] = float(np.max(np.abs(x0_grid.data - reference_latent)))
                entry["psnr"] = psnr(decode(x0_grid, codec), reference)
            report.trajectory.append(entry)
            report.step_seconds.append(entry["seconds"])
    finally:
        if pool is not None:
            pool.shutdown(wait=False, cancel_futures=True)

    output = decode(LatentGrid(current), codec)
    report.output_size = (output.width, output.height)
    report.total_seconds = time.perf_counter() - started
    return output, report
