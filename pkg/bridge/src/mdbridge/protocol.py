"""Server-side implementation of the denoiser wire protocol.

Independent of the engine package on purpose: the byte layout is the
contract, and golden transcripts pin both implementations to it.

    handshake (server -> client): b"MDF1" | u32 win_w | u32 win_h | u32 ch
    request:  u8 kind | u64 seq | u32 timestep | f64 guidance
              | u32 tag_len | tags | u32 elems | elems * f32 (LE, row-major)
    response: u64 seq | u8 status | payload
              (tensor: u32 elems + f32s; text/diagnostic: u32 len + UTF-8)

Kinds: 1 denoise, 2 tags, 3 metric. Anything unparseable is a protocol
error and the connection must be dropped.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"MDF1"
KIND_DENOISE = 1
KIND_TAGS = 2
KIND_METRIC = 3
KNOWN_KINDS = (KIND_DENOISE, KIND_TAGS, KIND_METRIC)

MAX_TAG_BYTES = 1 << 20
MAX_ELEMENTS = 1 << 24

STATUS_OK = 0
STATUS_MODEL_ERROR = 1
STATUS_UNSUPPORTED = 2

_HANDSHAKE = struct.Struct("<4sIII")
_REQ_HEAD = struct.Struct("<BQId")
_RESP_HEAD = struct.Struct("<QB")
_U32 = struct.Struct("<I")


class WireError(Exception):
    """Unparseable frame; the connection cannot be trusted afterwards."""


@dataclass(frozen=True)
class Request:
    kind: int
    seq: int
    timestep: int
    guidance_scale: float
    tags: str
    tensor: np.ndarray


def read_exact(stream, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise WireError(f"connection closed mid-frame ({len(buf)}/{n} bytes)")
        buf += chunk
    return buf


def handshake_bytes(window_w: int, window_h: int, channels: int) -> bytes:
    return _HANDSHAKE.pack(MAGIC, window_w, window_h, channels)


def read_request(stream) -> Request:
    kind, seq, timestep, guidance = _REQ_HEAD.unpack(read_exact(stream, _REQ_HEAD.size))
    if kind not in KNOWN_KINDS:
        raise WireError(f"unknown request kind {kind}")
    (tag_len,) = _U32.unpack(read_exact(stream, 4))
    if tag_len > MAX_TAG_BYTES:
        raise WireError(f"tag length {tag_len} exceeds cap {MAX_TAG_BYTES}")
    try:
        tags = read_exact(stream, tag_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise WireError(f"invalid UTF-8 tag payload: {exc}") from exc
    (count,) = _U32.unpack(read_exact(stream, 4))
    if count > MAX_ELEMENTS:
        raise WireError(f"element count {count} exceeds cap {MAX_ELEMENTS}")
    tensor = np.frombuffer(read_exact(stream, 4 * count), dtype="<f4").copy()
    return Request(kind=kind, seq=seq, timestep=timestep, guidance_scale=guidance, tags=tags, tensor=tensor)


def tensor_response(seq: int, tensor: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    if arr.size > MAX_ELEMENTS:
        raise WireError(f"response tensor of {arr.size} elements exceeds cap {MAX_ELEMENTS}")
    return _RESP_HEAD.pack(seq, STATUS_OK) + _U32.pack(arr.size) + arr.tobytes()


def text_response(seq: int, text: str, status: int = STATUS_OK) -> bytes:
    payload = text.encode("utf-8")
    return _RESP_HEAD.pack(seq, status) + _U32.pack(len(payload)) + payload
