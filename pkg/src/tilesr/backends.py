"""Denoiser backends: the step contract, a toy analytic oracle, and the
wire-protocol client.

A backend turns the latent at timestep t into the latent at t-1 under a
tag condition. The toy backend predicts the noise that is exact when the
clean latent equals a known target, so under the deterministic sampler the
whole trajectory contracts onto that target; it is the verification oracle
for everything downstream. Real models attach through RemoteDenoiser /
RemoteTagger, which speak the byte protocol to an external process.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .conditioning import TagCondition
from .errors import BackendError, GeometryError
from .grids import LatentGrid
from .protocol import ProtocolClient
from .schedule import DiffusionSchedule
from .tiling import WindowSpec

__all__ = [
    "DenoiserRequest",
    "toy_epsilon",
    "estimate_x0",
    "ddim_update",
    "ToyDenoiser",
    "RemoteDenoiser",
    "RemoteTagger",
    "denoise_step",
]


@dataclass(frozen=True)
class DenoiserRequest:
    latent: LatentGrid
    timestep: int
    condition: TagCondition | None = None
    guidance_scale: float = 0.0


def _check_timestep(t: int, schedule: DiffusionSchedule) -> None:
    if not 0 < t <= schedule.steps:
        raise BackendError(f"timestep {t} out of range 1..{schedule.steps}")


def _toy_epsilon(latent: np.ndarray, t: int, target: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    ab = schedule.alpha_bar[t]
    if t >= 1 and ab >= 1.0:
        raise BackendError(f"degenerate schedule: alpha_bar[{t}] == 1")
    return (latent - np.sqrt(ab) * target) / np.sqrt(1.0 - ab)


def toy_epsilon(latent: LatentGrid, t: int, target: LatentGrid, schedule: DiffusionSchedule) -> LatentGrid:
    """Noise prediction that is exact when the clean latent equals target."""
    _check_timestep(t, schedule)
    if latent.data.shape != target.data.shape:
        raise GeometryError(f"latent {latent.data.shape} and target {target.data.shape} differ")
    return LatentGrid(_toy_epsilon(latent.data, t, target.data, schedule))


def estimate_x0(latent: np.ndarray, eps: np.ndarray, t: int, schedule: DiffusionSchedule) -> np.ndarray:
    """Clean-latent estimate implied by a noise prediction at timestep t."""
    ab = schedule.alpha_bar[t]
    return (latent - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def ddim_update(
    latent: np.ndarray,
    eps: np.ndarray,
    t: int,
    schedule: DiffusionSchedule,
    *,
    eta: float = 0.0,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One reverse step t -> t-1: estimate the clean latent, then re-noise.

    eta = 0 is fully deterministic; eta > 0 injects scaled fresh noise
    (which the caller supplies so it can be shared across windows).
    """
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t - 1]
    x0 = (latent - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
    if eta == 0.0:
        return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
    sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev)
    out = np.sqrt(ab_prev) * x0 + np.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps
    if noise is None:
        raise BackendError("stochastic update requires caller-supplied noise")
    return out + sigma * noise


class ToyDenoiser:
    """Analytic denoiser with a known fixed point.

    Holds a full-size target latent; when stepping a window it uses the
    target crop at that window's position, so the oracle works through
    tiling. Ignores conditions entirely, which makes classifier-free
    guidance a no-op by construction. Pure and safe for concurrent calls.
    """

    window_size: tuple[int, int] | None = None  # accepts any window
    channels: int | None = None

    def __init__(self, target: LatentGrid | np.ndarray, eta: float = 0.0):
        self.target = target.data if isinstance(target, LatentGrid) else np.asarray(target, dtype=np.float64)
        self.eta = eta
        self.channels = self.target.shape[2]

    def _target_crop(self, shape: tuple, window: WindowSpec | None) -> np.ndarray:
        if window is None:
            if self.target.shape != shape:
                raise GeometryError(f"latent shape {shape} does not match toy target {self.target.shape}")
            return self.target
        return self.target[
            window.origin_y : window.origin_y + window.height,
            window.origin_x : window.origin_x + window.width,
        ]

    def epsilon(
        self,
        latent: np.ndarray,
        t: int,
        *,
        condition: TagCondition | None = None,
        guidance_scale: float = 0.0,
        schedule: DiffusionSchedule,
        window: WindowSpec | None = None,
    ) -> np.ndarray:
        # conditional and unconditional predictions coincide here, so the
        # guidance mix collapses to the single prediction
        return _toy_epsilon(latent, t, self._target_crop(latent.shape, window), schedule)

    def step(
        self,
        latent: np.ndarray,
        t: int,
        *,
        condition: TagCondition | None = None,
        guidance_scale: float = 0.0,
        schedule: DiffusionSchedule,
        window: WindowSpec | None = None,
        noise: np.ndarray | None = None,
    ) -> np.ndarray:
        eps = self.epsilon(
            latent, t, condition=condition, guidance_scale=guidance_scale, schedule=schedule, window=window
        )
        return ddim_update(latent, eps, t, schedule, eta=self.eta, noise=noise)


class _ConnectionPool:
    """One protocol connection per calling thread, all closed together."""

    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port
        self._local = threading.local()
        self._all: list[ProtocolClient] = []
        self._lock = threading.Lock()

    def get(self) -> ProtocolClient:
        client = getattr(self._local, "client", None)
        if client is None:
            client = ProtocolClient.connect(self.host, self.port)
            self._local.client = client
            with self._lock:
                self._all.append(client)
        return client

    def close(self) -> None:
        with self._lock:
            clients, self._all = self._all, []
        for client in clients:
            try:
                client.close()
            except OSError:
                pass


class RemoteDenoiser:
    """Denoiser served by an external process over the wire protocol.

    The server declares its window dims and latent channel count in the
    handshake; the engine validates tile plans against them. Each worker
    thread gets its own connection (one request in flight per connection).
    """

    def __init__(self, host: str, port: int):
        self._pool = _ConnectionPool(host, port)
        probe = self._pool.get()
        self.window_size: tuple[int, int] | None = (probe.window_width, probe.window_height)
        self.channels: int | None = probe.channels

    def step(
        self,
        latent: np.ndarray,
        t: int,
        *,
        condition: TagCondition | None = None,
        guidance_scale: float = 0.0,
        schedule: DiffusionSchedule | None = None,
        window: WindowSpec | None = None,
        noise: np.ndarray | None = None,
    ) -> np.ndarray:
        tags = condition.to_text() if condition is not None else ""
        out = self._pool.get().denoise(latent.astype("<f4"), t, guidance_scale, tags)
        return out.astype(np.float64)

    def close(self) -> None:
        self._pool.close()


class RemoteTagger:
    """Tag extractor served over the wire protocol (kind 2).

    Requests on one connection are serialized by the client lock;
    normalization and deduplication of the returned tag string happen
    engine-side.
    """

    native_size = (512, 512)
    concurrent_safe = True  # safe via per-connection serialization

    def __init__(self, host: str, port: int):
        self._pool = _ConnectionPool(host, port)
        self._pool.get()  # validate handshake eagerly

    def extract(self, image) -> TagCondition:
        pixels = image.data.astype("<f4")
        return TagCondition.from_text(self._pool.get().tags(pixels))

    def close(self) -> None:
        self._pool.close()


def denoise_step(
    backend,
    request: DenoiserRequest,
    schedule: DiffusionSchedule,
    *,
    window: WindowSpec | None = None,
    noise: np.ndarray | None = None,
) -> LatentGrid:
    """Validated single reverse step through any backend."""
    _check_timestep(request.timestep, schedule)
    dims = getattr(backend, "window_size", None)
    if dims is not None and (request.latent.width, request.latent.height) != dims:
        raise GeometryError(
            f"latent {request.latent.width}x{request.latent.height} does not match "
            f"backend window {dims[0]}x{dims[1]}"
        )
    channels = getattr(backend, "channels", None)
    if channels is not None and request.latent.channels != channels:
        raise GeometryError(
            f"latent has {request.latent.channels} channels, backend declares {channels}"
        )
    try:
        out = backend.step(
            request.latent.data,
            request.timestep,
            condition=request.condition,
            guidance_scale=request.guidance_scale,
            schedule=schedule,
            window=window,
            noise=noise,
        )
    except (GeometryError, BackendError):
        raise
    except Exception as exc:
        raise BackendError(f"backend failed at timestep {request.timestep}: {exc}") from exc
    return LatentGrid(out)
