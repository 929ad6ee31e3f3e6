"""The bridge server: models behind the wire protocol.

One request in flight per connection; the engine opens more connections
when it wants parallelism. Model failures answer with a nonzero status and
a diagnostic string but keep the connection alive; unparseable frames drop
the connection with an error log, since framing can no longer be trusted.
With no adapters configured the server runs in identity-echo mode, the
protocol-conformance target.
"""

from __future__ import annotations

import logging
import socketserver
import threading
from dataclasses import dataclass, field

from .adapters import DenoiserAdapter, MetricAdapter, TaggerAdapter
from .protocol import (
    KIND_DENOISE,
    KIND_METRIC,
    KIND_TAGS,
    STATUS_MODEL_ERROR,
    STATUS_UNSUPPORTED,
    WireError,
    handshake_bytes,
    read_request,
    tensor_response,
    text_response,
)

logger = logging.getLogger("mdbridge")


@dataclass
class BridgeConfig:
    host: str = "127.0.0.1"
    port: int = 9400
    window_width: int = 64
    window_height: int = 64
    channels: int = 4
    denoiser: DenoiserAdapter | None = None
    tagger: TaggerAdapter | None = None
    metric: MetricAdapter | None = None
    echo_tag_reply: str = ""

    def __post_init__(self):
        if self.denoiser is not None:
            declared = (self.window_width, self.window_height, self.channels)
            actual = (self.denoiser.window_width, self.denoiser.window_height, self.denoiser.channels)
            if declared != actual:
                raise ValueError(
                    f"declared handshake dims {declared} do not match the denoiser's {actual}"
                )

    @property
    def echo_mode(self) -> bool:
        return self.denoiser is None


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        config: BridgeConfig = self.server.config  # type: ignore[attr-defined]
        peer = "%s:%s" % self.client_address
        logger.info("connection opened peer=%s", peer)
        self.wfile.write(handshake_bytes(config.window_width, config.window_height, config.channels))
        self.wfile.flush()
        served = 0
        try:
            while True:
                try:
                    request = read_request(self.rfile)
                except WireError as exc:
                    if "closed mid-frame (0/" not in str(exc):  # quiet on clean EOF
                        logger.error("protocol error peer=%s error=%r; dropping connection", peer, str(exc))
                    return
                self.wfile.write(self._respond(config, request))
                self.wfile.flush()
                served += 1
        except (ConnectionError, OSError) as exc:
            logger.warning("connection lost peer=%s error=%r", peer, str(exc))
        finally:
            logger.info("connection closed peer=%s requests=%d", peer, served)

    def _respond(self, config: BridgeConfig, request) -> bytes:
        try:
            if request.kind == KIND_DENOISE:
                if config.denoiser is None:
                    return tensor_response(request.seq, request.tensor)  # echo
                shape = (config.window_height, config.window_width, config.channels)
                expected = shape[0] * shape[1] * shape[2]
                if request.tensor.size != expected:
                    return text_response(
                        request.seq,
                        f"latent has {request.tensor.size} elements, expected {expected}",
                        STATUS_MODEL_ERROR,
                    )
                out = config.denoiser.denoise(
                    request.tensor.reshape(shape), request.timestep, request.tags, request.guidance_scale
                )
                return tensor_response(request.seq, out)
            if request.kind == KIND_TAGS:
                if config.tagger is None:
                    return text_response(request.seq, config.echo_tag_reply)
                return text_response(request.seq, config.tagger.tag(request.tensor))
            if request.kind == KIND_METRIC:
                if config.metric is None:
                    return text_response(request.seq, "no metric model loaded", STATUS_UNSUPPORTED)
                import numpy as np

                return tensor_response(
                    request.seq, np.array([config.metric.score(request.tensor)], dtype="<f4")
                )
            raise AssertionError("unreachable: kind validated by the reader")
        except Exception as exc:  # a model error must not kill the connection
            logger.error("model error kind=%d seq=%d error=%r", request.kind, request.seq, str(exc))
            return text_response(request.seq, str(exc), STATUS_MODEL_ERROR)


class BridgeServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, config: BridgeConfig):
        self.config = config
        super().__init__((config.host, config.port), _Handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def start(self) -> "BridgeServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(config: BridgeConfig) -> BridgeServer:
    """Bind and return the server; call serve_forever() (or start()) on it."""
    server = BridgeServer(config)
    mode = "echo" if config.echo_mode else "model"
    logger.info(
        "listening host=%s port=%d mode=%s window=%dx%d channels=%d",
        *server.address,
        mode,
        config.window_width,
        config.window_height,
        config.channels,
    )
    return server
