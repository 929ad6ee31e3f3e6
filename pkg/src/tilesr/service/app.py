"""FastAPI service exposing the super-resolution engine.

Paths in requests refer to the service host's filesystem; the bundled CLI
runs the app in-process by default, so local use needs no running server.
"""

from __future__ import annotations

import math
import os
import tempfile
from contextlib import ExitStack

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..backends import RemoteDenoiser, RemoteTagger, ToyDenoiser
from ..protocol import ProtocolClient
from ..conditioning import MockTagger, assign_local_prompts, tag_analytics_row, write_tag_analytics_csv
from ..errors import BackendError, GeometryError, ProtocolError
from ..grids import CodecSpec, ImageGrid, encode, load_image, save_image
from ..metrics import evaluate_pair, write_metrics_csv
from ..pipeline import PipelineConfig, run
from ..protocol import EchoServer
from ..tiling import describe_plan, plan_tiles
from .models import (
    ConfigModel,
    EvalRequest,
    EvalResponse,
    EvalRow,
    HealthResponse,
    MetricsModel,
    PlanRequest,
    PlanResponse,
    RunItemResult,
    RunRequest,
    RunResponse,
    TagAnalyticsRequest,
    TagAnalyticsResponse,
    TagAnalyticsRow,
    WindowModel,
)

BRIDGE_ENV = "TILESR_BRIDGE"
_IMAGE_SUFFIXES = (".png", ".PNG")


def _usage(message: str) -> HTTPException:
    return HTTPException(status_code=400, detail={"error": message, "error_kind": "usage"})


def _classify(exc: Exception) -> str:
    if isinstance(exc, (BackendError, ProtocolError)):
        return "backend"
    if isinstance(exc, (OSError, IOError)):
        return "io"
    return "usage"


def _expand_inputs(paths: list[str]) -> list[str]:
    """Files pass through; directories expand to their PNGs, sorted."""
    out: list[str] = []
    for path in paths:
        if os.path.isdir(path):
            entries = sorted(
                os.path.join(path, name)
                for name in os.listdir(path)
                if name.endswith(_IMAGE_SUFFIXES)
            )
            out.extend(entries)
        else:
            out.append(path)
    return out


def _resolve_reference(reference: str | None, input_path: str) -> str | None:
    if reference is None:
        return None
    if os.path.isdir(reference):
        candidate = os.path.join(reference, os.path.basename(input_path))
        return candidate if os.path.exists(candidate) else None
    return reference


def _parse_address(selector: str, prefix: str) -> tuple[str, int]:
    address = selector[len(prefix):].lstrip(":") or os.environ.get(BRIDGE_ENV, "")
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise _usage(
            f"selector {selector!r} needs an address as {prefix}:<host>:<port> "
            f"(or set ${BRIDGE_ENV})"
        )
    return host, int(port)


def _pipeline_config(model: ConfigModel) -> PipelineConfig:
    return PipelineConfig(
        window=model.window,
        stride=model.stride,
        scale=model.scale,
        steps=model.steps,
        schedule_kind=model.schedule,
        sampler=model.sampler,
        eta=model.eta,
        guidance_scale=model.guidance_scale,
        seed=model.seed,
        prompt_mode=model.prompt_mode,
        workers=model.workers,
        canonical_order=model.canonical_order,
        spatial_factor=model.spatial_factor,
        init_from_lr=model.init_from_lr,
        allow_gapped_stride=model.allow_gapped_stride,
    )


def _write_text(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _make_extractor(selector: str, stack: ExitStack):
    if selector == "mock":
        return MockTagger()
    if selector.startswith("bridge"):
        host, port = _parse_address(selector, "bridge")
        tagger = RemoteTagger(host, port)
        stack.callback(tagger.close)
        return tagger
    raise _usage(f"unknown extractor selector {selector!r}")


def _make_backend(
    selector: str,
    config: PipelineConfig,
    channels: int,
    reference: ImageGrid | None,
    codec: CodecSpec,
    stack: ExitStack,
):
    if selector == "toy" or selector.startswith("toy:"):
        target_path = selector[4:] if selector.startswith("toy:") else ""
        if target_path:
            target_image = load_image(target_path)
        elif reference is not None:
            target_image = reference
        else:
            raise BackendError("toy backend needs a target: use toy:<hr-path> or supply a reference")
        eta = config.eta if config.sampler == "stochastic" else 0.0
        return ToyDenoiser(encode(target_image, codec), eta=eta)
    if selector == "echo":
        server = EchoServer(dims=(config.window, config.window, channels)).start()
        stack.callback(server.stop)
        backend = RemoteDenoiser(*server.address)
        stack.callback(backend.close)
        return backend
    if selector.startswith("bridge"):
        host, port = _parse_address(selector, "bridge")
        backend = RemoteDenoiser(host, port)
        stack.callback(backend.close)
        return backend
    raise _usage(f"unknown backend selector {selector!r}")


def create_app() -> FastAPI:
    app = FastAPI(title="tilesr", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/plan", response_model=PlanResponse)
    def plan(request: PlanRequest) -> PlanResponse:
        try:
            result = plan_tiles(
                request.parent_width,
                request.parent_height,
                request.window,
                request.window,
                request.stride,
                allow_gaps=request.allow_gapped_stride,
            )
        except GeometryError as exc:
            raise _usage(str(exc))
        return PlanResponse(
            windows=[WindowModel(**w._asdict()) for w in result.windows],
            text=describe_plan(result),
        )

    @app.post("/run", response_model=RunResponse)
    def run_jobs(request: RunRequest) -> RunResponse:
        if not request.inputs:
            return RunResponse(results=[])
        try:
            config = _pipeline_config(request.config)
        except ValueError as exc:
            raise _usage(str(exc))
        codec = CodecSpec(config.spatial_factor)
        os.makedirs(request.output_dir, exist_ok=True)

        results: list[RunItemResult] = []
        metric_rows: list[dict] = []
        for input_path in _expand_inputs(request.inputs):
            try:
                with ExitStack() as stack:
                    lr = load_image(input_path)
                    ref_path = _resolve_reference(request.reference, input_path)
                    reference = load_image(ref_path) if ref_path else None
                    extractor = _make_extractor(request.extractor, stack)
                    channels = lr.channels * config.spatial_factor**2
                    backend = _make_backend(
                        request.backend, config, channels, reference, codec, stack
                    )
                    output, report = run(lr, config, backend, extractor, codec, reference=reference)

                stem = os.path.splitext(os.path.basename(input_path))[0]
                output_path = os.path.join(request.output_dir, f"{stem}_sr.png")
                report_path = os.path.join(request.output_dir, f"{stem}_report.json")
                trajectory_path = os.path.join(request.output_dir, f"{stem}_trajectory.csv")
                save_image(output_path, output, bit_depth=request.bit_depth)
                _write_text(report_path, report.to_json() + "\n")
                _write_text(trajectory_path, report.trajectory_csv())

                metrics = None
                if reference is not None:
                    scored = evaluate_pair(output, reference)
                    metrics = MetricsModel(
                        psnr="inf" if math.isinf(scored.psnr) else scored.psnr, ssim=scored.ssim
                    )
                    metric_rows.append(
                        {
                            "image_id": stem,
                            "method": f"{request.backend.split(':')[0]}-{config.prompt_mode}",
                            "psnr": scored.psnr,
                            "ssim": scored.ssim,
                        }
                    )
                results.append(
                    RunItemResult(
                        input=input_path,
                        ok=True,
                        output_path=output_path,
                        report_path=report_path,
                        trajectory_path=trajectory_path,
                        metrics=metrics,
                    )
                )
            except HTTPException:
                raise
            except Exception as exc:
                results.append(
                    RunItemResult(
                        input=input_path, ok=False, error=str(exc), error_kind=_classify(exc)
                    )
                )
                if request.fail_fast:
                    break

        metrics_csv = None
        if metric_rows:
            metrics_csv = os.path.join(request.output_dir, "metrics.csv")
            write_metrics_csv(metrics_csv, metric_rows)
        return RunResponse(results=results, metrics_csv=metrics_csv)

    @app.post("/analyze-tags", response_model=TagAnalyticsResponse)
    def analyze_tags(request: TagAnalyticsRequest) -> TagAnalyticsResponse:
        codec = CodecSpec(request.spatial_factor)
        f = request.spatial_factor
        rows: list[TagAnalyticsRow] = []
        csv_rows: list[dict] = []
        with ExitStack() as stack:
            extractor = _make_extractor(request.extractor, stack)
            for input_path in _expand_inputs(request.inputs):
                image_id = os.path.splitext(os.path.basename(input_path))[0]
                try:
                    image = load_image(input_path)
                    if image.width % f or image.height % f:
                        raise GeometryError(
                            f"image {image.width}x{image.height} not divisible by spatial factor {f}"
                        )
                    window = min(request.window, image.width // f, image.height // f)
                    stride = min(request.stride, window)
                    plan_ = plan_tiles(image.width // f, image.height // f, window, window, stride)
                    assignment = assign_local_prompts(extractor, image, plan_, codec)
                    row = tag_analytics_row(image_id, assignment)
                    rows.append(
                        TagAnalyticsRow(
                            image_id=image_id,
                            ok=True,
                            global_tags=row["global_tags"],
                            local_unique_tags=row["local_unique_tags"],
                            window_tag_counts=row["window_tag_counts"],
                        )
                    )
                    csv_rows.append(row | {"error": ""})
                except Exception as exc:
                    rows.append(TagAnalyticsRow(image_id=image_id, ok=False, error=str(exc)))
                    csv_rows.append(
                        {
                            "image_id": image_id,
                            "global_tags": "",
                            "local_unique_tags": "",
                            "window_tag_counts": "",
                            "error": str(exc),
                        }
                    )
        directory = os.path.dirname(request.output_csv)
        if directory:
            os.makedirs(directory, exist_ok=True)
        write_tag_analytics_csv(request.output_csv, csv_rows)
        return TagAnalyticsResponse(rows=rows, output_csv=request.output_csv)

    @app.post("/eval", response_model=EvalResponse)
    def eval_pairs(request: EvalRequest) -> EvalResponse:
        rows: list[EvalRow] = []
        csv_rows: list[dict] = []
        with ExitStack() as stack:
            scorer = None
            if request.lpips_bridge:
                host, port = _parse_address(request.lpips_bridge, "bridge")
                scorer = ProtocolClient.connect(host, port)
                stack.callback(scorer.close)
            for sr_path, hr_path in request.pairs:
                image_id = os.path.splitext(os.path.basename(sr_path))[0]
                try:
                    sr = load_image(sr_path)
                    hr = load_image(hr_path)
                    report = evaluate_pair(
                        sr, hr, y_channel=request.y_channel, shave_border=request.shave_border
                    )
                    lpips = None
                    if scorer is not None:
                        stacked = np.concatenate([sr.data, hr.data], axis=2).astype("<f4")
                        lpips = scorer.metric(stacked)
                    rows.append(
                        EvalRow(
                            image_id=image_id,
                            ok=True,
                            psnr="inf" if math.isinf(report.psnr) else report.psnr,
                            ssim=report.ssim,
                            lpips=lpips,
                        )
                    )
                    csv_rows.append(
                        {
                            "image_id": image_id,
                            "method": "eval",
                            "psnr": report.psnr,
                            "ssim": report.ssim,
                            "lpips": lpips,
                        }
                    )
                except Exception as exc:
                    rows.append(EvalRow(image_id=image_id, ok=False, error=str(exc)))
                    csv_rows.append({"image_id": image_id, "method": "eval", "psnr": None, "ssim": None})
        finite = [r["psnr"] for r in csv_rows if r["psnr"] is not None and math.isfinite(r["psnr"])]
        ssims = [r["ssim"] for r in csv_rows if r["ssim"] is not None]
        if request.output_csv:
            directory = os.path.dirname(request.output_csv)
            if directory:
                os.makedirs(directory, exist_ok=True)
            write_metrics_csv(request.output_csv, csv_rows)
        return EvalResponse(
            rows=rows,
            mean_psnr=sum(finite) / len(finite) if finite else None,
            mean_ssim=sum(ssims) / len(ssims) if ssims else None,
            output_csv=request.output_csv,
        )

    return app


app = create_app()
