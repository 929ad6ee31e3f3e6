import socket
import struct

import numpy as np
import pytest

_HANDSHAKE = struct.Struct("<4sIII")
_REQ_HEAD = struct.Struct("<BQId")
_RESP_HEAD = struct.Struct("<QB")
_U32 = struct.Struct("<I")


class RawClient:
    """Minimal test-side protocol driver, independent of the server code."""

    def __init__(self, host, port, timeout=10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(timeout)
        self.stream = self.sock.makefile("rwb")
        magic, w, h, c = _HANDSHAKE.unpack(self._read(16))
        assert magic == b"MDF1"
        self.dims = (w, h, c)

    def _read(self, n):
        buf = b""
        while len(buf) < n:
            chunk = self.stream.read(n - len(buf))
            if not chunk:
                raise ConnectionError(f"short read ({len(buf)}/{n})")
            buf += chunk
        return buf

    def send_raw(self, blob: bytes):
        self.stream.write(blob)
        self.stream.flush()

    def request(self, kind, seq, timestep, guidance, tags, tensor):
        tag_bytes = tags.encode()
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        self.send_raw(
            _REQ_HEAD.pack(kind, seq, timestep, guidance)
            + _U32.pack(len(tag_bytes))
            + tag_bytes
            + _U32.pack(arr.size)
            + arr.tobytes()
        )
        return self.read_response(kind)

    def read_response(self, kind):
        seq, status = _RESP_HEAD.unpack(self._read(9))
        if status != 0 or kind == 2:
            (length,) = _U32.unpack(self._read(4))
            return seq, status, self._read(length).decode()
        (count,) = _U32.unpack(self._read(4))
        return seq, status, np.frombuffer(self._read(4 * count), dtype="<f4")

    def read_eof(self):
        return self.stream.read(1)

    def close(self):
        self.stream.close()
        self.sock.close()


@pytest.fixture
def raw_client():
    clients = []

    def connect(host, port, **kw):
        client = RawClient(host, port, **kw)
        clients.append(client)
        return client

    yield connect
    for client in clients:
        try:
            client.close()
        except OSError:
            pass
