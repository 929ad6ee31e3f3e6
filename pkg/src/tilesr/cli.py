"""Operator CLI: a thin client over the job service.

Talks HTTP to a remote service when --server is given; otherwise mounts
the service in-process, so local runs need no daemon. Exit codes: 0 ok,
1 usage, 2 IO, 3 backend/protocol.

Config precedence for run flags: explicit flag > --config file > default.
"""

from __future__ import annotations

import json
import os
import sys

import click

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_BACKEND = 3

_KIND_CODES = {"usage": EXIT_USAGE, "io": EXIT_IO, "backend": EXIT_BACKEND}

_CONFIG_KEYS = (
    "window", "stride", "scale", "steps", "schedule", "sampler", "eta",
    "guidance_scale", "seed", "prompt_mode", "workers", "canonical_order",
    "spatial_factor", "init_from_lr", "allow_gapped_stride",
)


class CliFailure(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        # some fastapi/starlette pairings warn about their own test client
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app, raise_server_exceptions=False)


def _post(client, path: str, payload: dict) -> dict:
    try:
        response = client.post(path, json=payload)
    except Exception as exc:
        raise CliFailure(f"cannot reach service: {exc}", EXIT_BACKEND)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail")
        except Exception:
            detail = response.text
        if isinstance(detail, dict):
            kind = detail.get("error_kind", "usage")
            raise CliFailure(detail.get("error", str(detail)), _KIND_CODES.get(kind, EXIT_USAGE))
        raise CliFailure(f"service error {response.status_code}: {detail}", EXIT_USAGE)
    return response.json()


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise CliFailure(f"cannot read config file: {exc}", EXIT_IO)
    except json.JSONDecodeError as exc:
        raise CliFailure(f"config file is not valid JSON: {exc}", EXIT_USAGE)
    unknown = set(data) - set(_CONFIG_KEYS)
    if unknown:
        raise CliFailure(f"unknown config keys: {sorted(unknown)}", EXIT_USAGE)
    return data


def _effective_config(file_config: dict, **flags) -> dict:
    merged = dict(file_config)
    for key, value in flags.items():
        if value is not None:
            merged[key] = value
    return merged


def _first_failure_code(results: list[dict]) -> int:
    for item in results:
        if not item.get("ok"):
            return _KIND_CODES.get(item.get("error_kind") or "io", EXIT_IO)
    return EXIT_OK


@click.group()
def cli():
    """Tiled diffusion super-resolution jobs."""


_server_option = click.option("--server", default=None, help="Remote service URL (default: in-process).")


@cli.command("run")
@click.option("--input", "inputs", multiple=True, required=True, help="LR image file or directory.")
@click.option("--output-dir", required=True)
@click.option("--backend", default=None, help="toy | toy:<hr.png> | echo | bridge:<host:port>")
@click.option("--extractor", "--tags", "extractor", default=None, help="mock | bridge:<host:port>")
@click.option("--reference", default=None, help="HR reference file or directory (enables metrics).")
@click.option("--window", type=int, default=None)
@click.option("--stride", type=int, default=None)
@click.option("--scale", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--schedule", type=click.Choice(["linear", "cosine"]), default=None)
@click.option("--sampler", type=click.Choice(["deterministic", "stochastic"]), default=None)
@click.option("--eta", type=float, default=None)
@click.option("--guidance-scale", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--prompt-mode", type=click.Choice(["local", "global"]), default=None)
@click.option("--workers", type=int, default=None)
@click.option("--canonical-order/--free-order", default=None)
@click.option("--spatial-factor", type=int, default=None)
@click.option("--init-from-lr/--pure-noise-init", default=None)
@click.option("--allow-gapped-stride", is_flag=True, default=None)
@click.option("--fail-fast", is_flag=True, default=False)
@click.option("--bit-depth", type=click.Choice(["8", "16"]), default="8")
@click.option("--config", "config_path", default=None, help="JSON config file.")
@_server_option
def cmd_run(inputs, output_dir, backend, extractor, reference, fail_fast, bit_depth, config_path, server, **flags):
    """Super-resolve images and write outputs, reports, and metrics."""
    for path in inputs:
        if not os.path.exists(path):
            raise CliFailure(f"input path does not exist: {path}", EXIT_IO)
    if reference and not os.path.exists(reference):
        raise CliFailure(f"reference path does not exist: {reference}", EXIT_IO)

    config = _effective_config(_load_config_file(config_path), **flags)
    payload = {
        "inputs": list(inputs),
        "output_dir": output_dir,
        "backend": backend or "toy",
        "extractor": extractor or "mock",
        "reference": reference,
        "config": config,
        "fail_fast": fail_fast,
        "bit_depth": int(bit_depth),
    }
    body = _post(_client(server), "/run", payload)
    for item in body["results"]:
        if item["ok"]:
            line = f"ok {item['input']} -> {item['output_path']}"
            if item.get("metrics"):
                line += f" (psnr {item['metrics']['psnr']}, ssim {item['metrics']['ssim']:.4f})"
            click.echo(line)
        else:
            click.echo(f"FAILED {item['input']}: {item['error']}", err=True)
    if body.get("metrics_csv"):
        click.echo(f"metrics: {body['metrics_csv']}")
    sys.exit(_first_failure_code(body["results"]))


@cli.command("analyze-tags")
@click.option("--input", "inputs", multiple=True, required=True)
@click.option("--output", "output_csv", required=True, help="Destination CSV.")
@click.option("--extractor", "--tags", "extractor", default="mock")
@click.option("--window", type=int, default=64)
@click.option("--stride", type=int, default=32)
@click.option("--spatial-factor", type=int, default=8)
@_server_option
def cmd_analyze_tags(inputs, output_csv, extractor, window, stride, spatial_factor, server):
    """Count global vs local-unique tags per image (plot-ready CSV)."""
    payload = {
        "inputs": list(inputs),
        "output_csv": output_csv,
        "extractor": extractor,
        "window": window,
        "stride": stride,
        "spatial_factor": spatial_factor,
    }
    body = _post(_client(server), "/analyze-tags", payload)
    for row in body["rows"]:
        if row["ok"]:
            click.echo(
                f"{row['image_id']}: global {row['global_tags']}, local unique {row['local_unique_tags']}"
            )
        else:
            click.echo(f"FAILED {row['image_id']}: {row['error']}", err=True)
    click.echo(f"csv: {body['output_csv']}")
    sys.exit(EXIT_OK)


@cli.command("eval")
@click.option("--pair", "pairs", type=(str, str), multiple=True, help="SR and HR image paths.")
@click.option("--sr-dir", default=None)
@click.option("--hr-dir", default=None)
@click.option("--output", "output_csv", default=None)
@click.option("--y-channel", is_flag=True, default=False)
@click.option("--shave-border", type=int, default=0)
@click.option("--lpips-bridge", default=None, help="bridge:<host:port> exposing a perceptual scorer.")
@_server_option
def cmd_eval(pairs, sr_dir, hr_dir, output_csv, y_channel, shave_border, lpips_bridge, server):
    """PSNR/SSIM over (SR, HR) pairs; emits one CSV row per pair plus a mean row."""
    pair_list = [list(p) for p in pairs]
    if sr_dir or hr_dir:
        if not (sr_dir and hr_dir):
            raise CliFailure("--sr-dir and --hr-dir must be given together", EXIT_USAGE)
        if not os.path.isdir(sr_dir) or not os.path.isdir(hr_dir):
            raise CliFailure("--sr-dir/--hr-dir must be directories", EXIT_IO)
        for name in sorted(os.listdir(sr_dir)):
            if name.endswith(".png"):
                pair_list.append([os.path.join(sr_dir, name), os.path.join(hr_dir, name)])
    if not pair_list:
        raise CliFailure("no pairs given (use --pair or --sr-dir/--hr-dir)", EXIT_USAGE)

    payload = {
        "pairs": pair_list,
        "output_csv": output_csv,
        "y_channel": y_channel,
        "shave_border": shave_border,
        "lpips_bridge": lpips_bridge,
    }
    body = _post(_client(server), "/eval", payload)
    failed = False
    for row in body["rows"]:
        if row["ok"]:
            click.echo(f"{row['image_id']}: psnr {row['psnr']}, ssim {row['ssim']:.4f}")
        else:
            failed = True
            click.echo(f"FAILED {row['image_id']}: {row['error']}", err=True)
    if body.get("mean_psnr") is not None:
        click.echo(f"mean: psnr {body['mean_psnr']:.4f}, ssim {body['mean_ssim']:.4f}")
    sys.exit(EXIT_IO if failed else EXIT_OK)


@cli.command("plan")
@click.option("--parent-width", type=int, required=True, help="Parent latent width in cells.")
@click.option("--parent-height", type=int, required=True)
@click.option("--window", type=int, default=64)
@click.option("--stride", type=int, default=32)
@click.option("--allow-gapped-stride", is_flag=True, default=False)
@_server_option
def cmd_plan(parent_width, parent_height, window, stride, allow_gapped_stride, server):
    """Print the tile plan for a parent latent size."""
    payload = {
        "parent_width": parent_width,
        "parent_height": parent_height,
        "window": window,
        "stride": stride,
        "allow_gapped_stride": allow_gapped_stride,
    }
    body = _post(_client(server), "/plan", payload)
    click.echo(body["text"])
    sys.exit(EXIT_OK)


@cli.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def cmd_serve(host, port):
    """Host the job service over HTTP."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except CliFailure as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.code
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
