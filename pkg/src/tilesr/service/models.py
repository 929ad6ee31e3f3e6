"""Request/response schemas for the job service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class ConfigModel(BaseModel):
    window: int = 64
    stride: int = 32
    scale: int = 4
    steps: int = 50
    schedule: Literal["linear", "cosine"] = "linear"
    sampler: Literal["deterministic", "stochastic"] = "deterministic"
    eta: float = 1.0
    guidance_scale: float = 5.5
    seed: int = 0
    prompt_mode: Literal["local", "global"] = "local"
    workers: int = Field(default=1, ge=1)
    canonical_order: bool = True
    spatial_factor: int = Field(default=8, ge=1)
    init_from_lr: bool = False
    allow_gapped_stride: bool = False


class RunRequest(BaseModel):
    inputs: list[str]
    output_dir: str
    backend: str = "toy"  # "toy" | "toy:<hr-path>" | "echo" | "bridge:<host:port>"
    extractor: str = "mock"  # "mock" | "bridge:<host:port>"
    reference: str | None = None
    config: ConfigModel = ConfigModel()
    fail_fast: bool = False
    bit_depth: Literal[8, 16] = 8


class MetricsModel(BaseModel):
    psnr: float | str
    ssim: float
    lpips: float | None = None


class RunItemResult(BaseModel):
    input: str
    ok: bool
    output_path: str | None = None
    report_path: str | None = None
    trajectory_path: str | None = None
    metrics: MetricsModel | None = None
    error: str | None = None
    error_kind: Literal["usage", "io", "backend"] | None = None


class RunResponse(BaseModel):
    results: list[RunItemResult]
    metrics_csv: str | None = None


class TagAnalyticsRequest(BaseModel):
    inputs: list[str]
    output_csv: str
    extractor: str = "mock"
    window: int = 64
    stride: int = 32
    spatial_factor: int = Field(default=8, ge=1)


class TagAnalyticsRow(BaseModel):
    image_id: str
    ok: bool
    global_tags: int | None = None
    local_unique_tags: int | None = None
    window_tag_counts: str | None = None
    error: str | None = None


class TagAnalyticsResponse(BaseModel):
    rows: list[TagAnalyticsRow]
    output_csv: str


class EvalRequest(BaseModel):
    pairs: list[tuple[str, str]]  # (sr, hr)
    output_csv: str | None = None
    y_channel: bool = False
    shave_border: int = Field(default=0, ge=0)
    lpips_bridge: str | None = None  # bridge:<host:port> exposing the metric kind


class EvalRow(BaseModel):
    image_id: str
    ok: bool
    psnr: float | str | None = None
    ssim: float | None = None
    lpips: float | None = None
    error: str | None = None


class EvalResponse(BaseModel):
    rows: list[EvalRow]
    mean_psnr: float | None = None
    mean_ssim: float | None = None
    output_csv: str | None = None


class PlanRequest(BaseModel):
    parent_width: int
    parent_height: int
    window: int = 64
    stride: int = 32
    allow_gapped_stride: bool = False


class WindowModel(BaseModel):
    index: int
    origin_x: int
    origin_y: int
    width: int
    height: int


class PlanResponse(BaseModel):
    windows: list[WindowModel]
    text: str


class HealthResponse(BaseModel):
    status: str
    version: str
