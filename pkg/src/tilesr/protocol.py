"""Bit-exact wire protocol for out-of-process denoisers and tag extractors.

All integers are little-endian; tensors travel as raw float32, row-major,
channel-last. One request is in flight per connection; responses carry the
request's sequence id.

    handshake (server -> client on connect):
        magic b"MDF1" | u32 window_w | u32 window_h | u32 channels
    request (client -> server):
        u8 kind | u64 seq | u32 timestep | f64 guidance_scale
        | u32 tag_bytes_len | tag bytes (UTF-8, ", "-joined)
        | u32 element_count | element_count * f32
    response (server -> client):
        u64 seq | u8 status | payload
        status 0, kind 1/3: u32 element_count | element_count * f32
        status 0, kind 2:   u32 byte_len | UTF-8 tag string
        status != 0:        u32 byte_len | UTF-8 diagnostic

Kinds: 1 denoise (tensor in, tensor out), 2 tags (image pixels in, tag
string out), 3 metric (stacked image pair in, one-element tensor out).
Unknown kinds, bad magic, or length fields beyond the caps below are
protocol errors and the connection is dropped.
"""

from __future__ import annotations

import socket
import socketserver
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError

__all__ = [
    "MAGIC",
    "KIND_DENOISE",
    "KIND_TAGS",
    "KIND_METRIC",
    "Request",
    "Response",
    "read_handshake",
    "write_handshake",
    "encode_request",
    "read_request",
    "encode_response",
    "read_response",
    "ProtocolClient",
    "EchoServer",
    "golden_transcript",
]

MAGIC = b"MDF1"
KIND_DENOISE = 1
KIND_TAGS = 2
KIND_METRIC = 3
_KNOWN_KINDS = (KIND_DENOISE, KIND_TAGS, KIND_METRIC)

MAX_TAG_BYTES = 1 << 20
MAX_ELEMENTS = 1 << 24

_HANDSHAKE = struct.Struct("<4sIII")
_REQ_HEAD = struct.Struct("<BQId")
_RESP_HEAD = struct.Struct("<QB")
_U32 = struct.Struct("<I")

STATUS_OK = 0
STATUS_ERROR = 1
STATUS_UNSUPPORTED = 2


def _read_exact(stream, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise ProtocolError(f"connection closed mid-frame ({len(buf)}/{n} bytes)")
        buf += chunk
    return buf


def _tensor_bytes(tensor: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    if arr.size > MAX_ELEMENTS:
        raise ProtocolError(f"tensor of {arr.size} elements exceeds cap {MAX_ELEMENTS}")
    return _U32.pack(arr.size) + arr.tobytes()


def _read_tensor(stream) -> np.ndarray:
    (count,) = _U32.unpack(_read_exact(stream, 4))
    if count > MAX_ELEMENTS:
        raise ProtocolError(f"declared element count {count} exceeds cap {MAX_ELEMENTS}")
    return np.frombuffer(_read_exact(stream, 4 * count), dtype="<f4").copy()


def _read_text(stream, cap: int = MAX_TAG_BYTES) -> str:
    (length,) = _U32.unpack(_read_exact(stream, 4))
    if length > cap:
        raise ProtocolError(f"declared text length {length} exceeds cap {cap}")
    try:
        return _read_exact(stream, length).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"invalid UTF-8 in text payload: {exc}") from exc


@dataclass(frozen=True)
class Request:
    kind: int
    seq: int
    timestep: int
    guidance_scale: float
    tags: str
    tensor: np.ndarray


@dataclass(frozen=True)
class Response:
    seq: int
    status: int
    tensor: np.ndarray | None = None
    text: str | None = None


def write_handshake(stream, window_w: int, window_h: int, channels: int) -> None:
    stream.write(_HANDSHAKE.pack(MAGIC, window_w, window_h, channels))
    stream.flush()


def read_handshake(stream) -> tuple[int, int, int]:
    magic, w, h, c = _HANDSHAKE.unpack(_read_exact(stream, _HANDSHAKE.size))
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}, expected {MAGIC!r}")
    return w, h, c


def encode_request(
    kind: int,
    seq: int,
    timestep: int,
    guidance_scale: float,
    tags: str,
    tensor: np.ndarray,
) -> bytes:
    if kind not in _KNOWN_KINDS:
        raise ProtocolError(f"unknown request kind {kind}")
    tag_bytes = tags.encode("utf-8")
    if len(tag_bytes) > MAX_TAG_BYTES:
        raise ProtocolError(f"tag string of {len(tag_bytes)} bytes exceeds cap {MAX_TAG_BYTES}")
    return (
        _REQ_HEAD.pack(kind, seq, timestep, guidance_scale)
        + _U32.pack(len(tag_bytes))
        + tag_bytes
        + _tensor_bytes(tensor)
    )


def read_request(stream) -> Request:
    kind, seq, timestep, guidance = _REQ_HEAD.unpack(_read_exact(stream, _REQ_HEAD.size))
    if kind not in _KNOWN_KINDS:
        raise ProtocolError(f"unknown request kind {kind}")
    tags = _read_text(stream)
    tensor = _read_tensor(stream)
    return Request(kind=kind, seq=seq, timestep=timestep, guidance_scale=guidance, tags=tags, tensor=tensor)


def encode_response(
    seq: int,
    status: int = STATUS_OK,
    *,
    tensor: np.ndarray | None = None,
    text: str | None = None,
) -> bytes:
    head = _RESP_HEAD.pack(seq, status)
    if status != STATUS_OK or text is not None:
        payload = (text or "").encode("utf-8")
        return head + _U32.pack(len(payload)) + payload
    if tensor is None:
        raise ProtocolError("ok response needs a tensor or text payload")
    return head + _tensor_bytes(tensor)


def read_response(stream, kind: int) -> Response:
    seq, status = _RESP_HEAD.unpack(_read_exact(stream, _RESP_HEAD.size))
    if status != STATUS_OK or kind == KIND_TAGS:
        return Response(seq=seq, status=status, text=_read_text(stream))
    return Response(seq=seq, status=status, tensor=_read_tensor(stream))


class ProtocolClient:
    """Client side of the protocol over a TCP connection.

    One request in flight at a time; calls are serialized with a lock so a
    single client may be shared, at the cost of parallelism (open more
    connections for that).
    """

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._stream = sock.makefile("rwb")
        self._lock = threading.Lock()
        self._seq = 0
        self.window_width, self.window_height, self.channels = read_handshake(self._stream)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float | None = 300.0) -> "ProtocolClient":
        """Open a connection; the timeout also bounds each later roundtrip
        (generous by default: a real model step can be slow, but a dead
        peer must never hang the engine)."""
        try:
            sock = socket.create_connection((host, port), timeout=min(timeout or 10.0, 10.0))
        except OSError as exc:
            raise ProtocolError(f"cannot connect to {host}:{port}: {exc}") from exc
        sock.settimeout(timeout)
        return cls(sock)

    def _roundtrip(self, kind: int, timestep: int, guidance: float, tags: str, tensor: np.ndarray) -> Response:
        with self._lock:
            self._seq += 1
            seq = self._seq
            self._stream.write(encode_request(kind, seq, timestep, guidance, tags, tensor))
            self._stream.flush()
            response = read_response(self._stream, kind)
        if response.seq != seq:
            raise ProtocolError(f"response seq {response.seq} does not match request {seq}")
        if response.status != STATUS_OK:
            raise ProtocolError(f"server error (status {response.status}): {response.text}")
        return response

    def denoise(self, latent: np.ndarray, timestep: int, guidance_scale: float, tags: str) -> np.ndarray:
        shape = latent.shape
        response = self._roundtrip(KIND_DENOISE, timestep, guidance_scale, tags, latent)
        if response.tensor.size != latent.size:
            raise ProtocolError(
                f"denoise response has {response.tensor.size} elements, expected {latent.size}"
            )
        return response.tensor.reshape(shape)

    def tags(self, pixels: np.ndarray) -> str:
        return self._roundtrip(KIND_TAGS, 0, 0.0, "", pixels).text

    def metric(self, stacked_pair: np.ndarray) -> float:
        response = self._roundtrip(KIND_METRIC, 0, 0.0, "", stacked_pair)
        if response.tensor.size != 1:
            raise ProtocolError(f"metric response has {response.tensor.size} elements, expected 1")
        return float(response.tensor[0])

    def close(self) -> None:
        try:
            self._stream.close()
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _EchoHandler(socketserver.StreamRequestHandler):
    def handle(self):
        server: EchoServer = self.server  # type: ignore[assignment]
        try:
            write_handshake(self.wfile, *server.declared_dims)
            while True:
                request = read_request(self.rfile)
                if request.kind == KIND_DENOISE:
                    body = encode_response(request.seq, tensor=request.tensor)
                elif request.kind == KIND_TAGS:
                    body = encode_response(request.seq, text=server.tag_reply)
                else:
                    body = encode_response(
                        request.seq, STATUS_UNSUPPORTED, text="metric unsupported in echo mode"
                    )
                self.wfile.write(body)
                self.wfile.flush()
        except ProtocolError:
            return  # malformed frame or client hung up: drop the connection
        except (ConnectionError, OSError):
            return


class EchoServer(socketserver.ThreadingTCPServer):
    """In-process protocol server that echoes denoise payloads verbatim.

    Tags requests return a fixed reply (empty by default, which exercises
    the engine's empty-tag fallback); metric requests report unsupported.
    """

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, dims: tuple[int, int, int] = (64, 64, 4), tag_reply: str = "", host: str = "127.0.0.1"):
        self.declared_dims = dims
        self.tag_reply = tag_reply
        super().__init__((host, 0), _EchoHandler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def start(self) -> "EchoServer":
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


def golden_transcript() -> list[dict]:
    """Canonical byte-level session against an echo-mode server.

    Independent implementations of the protocol must reproduce these exact
    bytes: the server entries on accept/reply, the client entries on send.
    """
    latent = np.array([0.0, 0.5, -1.25, 3.0, -0.0078125, 100.0, -42.5, 0.15625], dtype="<f4")
    pixels = np.array(
        [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0, 0.0625, 0.03125, 0.015625],
        dtype="<f4",
    )
    entries = [
        ("handshake", "server", _HANDSHAKE.pack(MAGIC, 64, 64, 4)),
        ("denoise request", "client", encode_request(KIND_DENOISE, 1, 50, 5.5, "animal, lion", latent)),
        ("denoise echo response", "server", encode_response(1, tensor=latent)),
        ("tags request", "client", encode_request(KIND_TAGS, 2, 0, 0.0, "", pixels)),
        ("tags empty response", "server", encode_response(2, text="")),
    ]
    return [{"label": label, "direction": direction, "hex": data.hex()} for label, direction, data in entries]
