"""Out-of-band control channel between WiFi APs and the LTE-U management unit.

A WiFi node that decoded the network ID over the air connects back to the
management service over the wired network, fetches the cluster codebook it
needs to translate (slot, cluster) observations into cell IDs, and can
report its proximity estimate for inspection.

Wire format: every message is a 4-byte big-endian length prefix followed
by a version byte, a type byte, and the payload.  Malformed payloads get
an ERROR reply and the connection stays open; protocol violations (bad
version, unknown type, oversized frame, truncated framing) get a
best-effort ERROR and the connection is closed.  The codebook payload is
canonical — entries sorted row-major (cluster, slot), member IDs sorted,
with a trailing CRC-16 — so both ends can compare checksums byte for byte.
"""

from __future__ import annotations

import enum
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field

from .codec import crc16
from .multicell import Codebook

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 1 << 20
_PREFIX = struct.Struct("!I")


class MessageType(enum.IntEnum):
    HELLO = 1
    HELLO_ACK = 2
    GET_CODEBOOK = 3
    CODEBOOK = 4
    REPORT_PROXIMITY = 5
    REPORT_ACK = 6
    ERROR = 7


class ErrorCode(enum.IntEnum):
    MALFORMED = 1
    VERSION = 2
    AUTH = 3
    UNKNOWN_CELL = 4
    UNSUPPORTED = 5


class X2Error(Exception):
    """Base class for control-channel failures."""


class X2WireError(X2Error):
    """Framing problem: truncation, oversize, or a garbled payload."""


class X2ProtocolError(X2Error):
    """The peer speaks a different protocol version or rejected us."""


class X2ConnectivityError(X2Error):
    """Server unreachable within the configured retry budget."""


@dataclass(frozen=True)
class ApRegistration:
    """One WiFi AP known to the management unit."""

    ap_id: str
    network_id: int
    pairs: tuple[tuple[int, int], ...]
    timestamp: float


# ---------------------------------------------------------------------------
# Wire encoding.
# ---------------------------------------------------------------------------

def encode_message(msg_type: int, payload: bytes = b"", version: int = PROTOCOL_VERSION) -> bytes:
    body = struct.pack("!BB", version, msg_type) + payload
    if len(body) > MAX_FRAME_BYTES:
        raise X2WireError("message exceeds the frame limit")
    return _PREFIX.pack(len(body)) + body


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise X2WireError(f"connection closed {remaining} bytes early")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(sock: socket.socket) -> tuple[int, int, bytes]:
    """(version, type, payload) of the next frame; X2WireError on bad framing."""
    prefix = _recv_exact(sock, _PREFIX.size)
    (length,) = _PREFIX.unpack(prefix)
    if not 2 <= length <= MAX_FRAME_BYTES:
        raise X2WireError(f"frame length {length} outside [2, {MAX_FRAME_BYTES}]")
    body = _recv_exact(sock, length)
    return body[0], body[1], body[2:]


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise X2WireError("string field too long")
    return struct.pack("!H", len(raw)) + raw


class _Reader:
    """Sequential struct reader that turns short reads into X2WireError."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def take(self, fmt: str):
        s = struct.Struct(fmt)
        if self._pos + s.size > len(self._data):
            raise X2WireError("payload truncated")
        out = s.unpack_from(self._data, self._pos)
        self._pos += s.size
        return out

    def take_str(self) -> str:
        (n,) = self.take("!H")
        if self._pos + n > len(self._data):
            raise X2WireError("payload truncated")
        raw = self._data[self._pos:self._pos + n]
        self._pos += n
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise X2WireError("string field is not valid UTF-8") from exc

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise X2WireError("trailing bytes after payload")


def encode_hello(ap_id: str, network_id: int) -> bytes:
    return _pack_str(ap_id) + struct.pack("!I", network_id)


def decode_hello(payload: bytes) -> tuple[str, int]:
    reader = _Reader(payload)
    ap_id = reader.take_str()
    (network_id,) = reader.take("!I")
    reader.expect_end()
    return ap_id, network_id


def encode_report(ap_id: str, pairs, cells) -> bytes:
    pairs = sorted(pairs)
    cells = sorted(cells)
    out = [_pack_str(ap_id), struct.pack("!H", len(pairs))]
    out += [struct.pack("!HH", slot, cluster) for slot, cluster in pairs]
    out.append(struct.pack("!H", len(cells)))
    out += [struct.pack("!H", cell) for cell in cells]
    return b"".join(out)


def decode_report(payload: bytes) -> tuple[str, list[tuple[int, int]], list[int]]:
    reader = _Reader(payload)
    ap_id = reader.take_str()
    (n_pairs,) = reader.take("!H")
    pairs = [tuple(reader.take("!HH")) for _ in range(n_pairs)]
    (n_cells,) = reader.take("!H")
    cells = [reader.take("!H")[0] for _ in range(n_cells)]
    reader.expect_end()
    return ap_id, pairs, cells


def encode_error(code: int, detail: str) -> bytes:
    return struct.pack("!B", code) + _pack_str(detail)


def decode_error(payload: bytes) -> tuple[int, str]:
    reader = _Reader(payload)
    (code,) = reader.take("!B")
    detail = reader.take_str()
    reader.expect_end()
    return code, detail


def serialize_codebook(book: Codebook) -> bytes:
    """Canonical bytes: row-major (cluster, slot) entries plus a CRC-16."""
    entries = sorted(book.entries.items(), key=lambda kv: (kv[0][1], kv[0][0]))
    out = [struct.pack("!HH", len(entries), book.n_slots)]
    for (slot, cluster_id), members in entries:
        members = sorted(members)
        out.append(struct.pack("!HHB", slot, cluster_id, len(members)))
        out += [struct.pack("!H", m) for m in members]
    body = b"".join(out)
    return body + struct.pack("!H", crc16(body))


def deserialize_codebook(data: bytes) -> Codebook:
    if len(data) < 6:
        raise X2WireError("codebook payload too short")
    body, (checksum,) = data[:-2], struct.unpack("!H", data[-2:])
    if crc16(body) != checksum:
        raise X2WireError("codebook checksum mismatch")
    reader = _Reader(body)
    n_entries, n_slots = reader.take("!HH")
    entries = {}
    for _ in range(n_entries):
        slot, cluster_id, count = reader.take("!HHB")
        members = tuple(reader.take("!H")[0] for _ in range(count))
        entries[(slot, cluster_id)] = members
    reader.expect_end()
    return Codebook(entries, n_slots)


# ---------------------------------------------------------------------------
# Server.
# ---------------------------------------------------------------------------

class _CloseConnection(Exception):
    """Raised by the dispatcher after a protocol violation."""


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        registered_ap: str | None = None
        service: X2Service = self.server.service  # type: ignore[attr-defined]
        while True:
            try:
                version, msg_type, payload = read_message(self.request)
            except (X2WireError, OSError):
                self._best_effort_error(ErrorCode.MALFORMED, "bad framing")
                return
            try:
                registered_ap = self._dispatch(service, version, msg_type, payload, registered_ap)
            except _CloseConnection:
                return
            except X2WireError as exc:
                self._reply(MessageType.ERROR, encode_error(ErrorCode.MALFORMED, str(exc)))
            except Exception:  # never let a handler bug kill the connection loop
                self._best_effort_error(ErrorCode.MALFORMED, "internal dispatch failure")
                return

    def _dispatch(self, service, version, msg_type, payload, registered_ap):
        if version != PROTOCOL_VERSION:
            self._best_effort_error(ErrorCode.VERSION, f"unsupported version {version}")
            raise _CloseConnection
        if msg_type == MessageType.HELLO:
            ap_id, network_id = decode_hello(payload)
            if network_id != service.network_id:
                self._reply(
                    MessageType.ERROR,
                    encode_error(ErrorCode.AUTH, "network id does not match this unit"),
                )
                return registered_ap
            service._register(ap_id, network_id)
            self._reply(MessageType.HELLO_ACK, struct.pack("!BI", PROTOCOL_VERSION, service.network_id))
            return ap_id
        if msg_type == MessageType.GET_CODEBOOK:
            self._reply(MessageType.CODEBOOK, service.codebook_bytes)
            return registered_ap
        if msg_type == MessageType.REPORT_PROXIMITY:
            ap_id, pairs, cells = decode_report(payload)
            if registered_ap is None or ap_id != registered_ap:
                self._reply(
                    MessageType.ERROR,
                    encode_error(ErrorCode.AUTH, "report requires a completed handshake"),
                )
                return registered_ap
            problem = service._store_report(ap_id, pairs, cells)
            if problem is not None:
                self._reply(MessageType.ERROR, encode_error(ErrorCode.UNKNOWN_CELL, problem))
                return registered_ap
            self._reply(MessageType.REPORT_ACK, struct.pack("!H", len(cells)))
            return registered_ap
        self._best_effort_error(ErrorCode.UNSUPPORTED, f"unknown message type {msg_type}")
        raise _CloseConnection

    def _reply(self, msg_type: int, payload: bytes) -> None:
        self.request.sendall(encode_message(msg_type, payload))

    def _best_effort_error(self, code: int, detail: str) -> None:
        try:
            self._reply(MessageType.ERROR, encode_error(code, detail))
        except OSError:
            pass


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


@dataclass
class X2Service:
    """Management-unit service: codebook distribution plus AP registry."""

    codebook: Codebook
    network_id: int
    host: str = "127.0.0.1"
    port: int = 0  # 0 → pick a free port
    _server: _Server | None = field(default=None, repr=False)
    _thread: threading.Thread | None = field(default=None, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _registrations: dict = field(default_factory=dict, repr=False)
    _proximity: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.codebook_bytes = serialize_codebook(self.codebook)
        self._cells = {m for ms in self.codebook.entries.values() for m in ms}

    def start(self) -> "X2Service":
        self._server = _Server((self.host, self.port), _Handler)
        self._server.service = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    @property
    def address(self) -> tuple[str, int]:
        if self._server is None:
            raise X2Error("service is not running")
        return self._server.server_address[:2]

    def __enter__(self) -> "X2Service":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def registrations(self) -> dict[str, ApRegistration]:
        with self._lock:
            return dict(self._registrations)

    def proximity_map(self) -> dict[str, frozenset[int]]:
        with self._lock:
            return dict(self._proximity)

    def _register(self, ap_id: str, network_id: int) -> None:
        with self._lock:
            self._registrations[ap_id] = ApRegistration(ap_id, network_id, (), time.time())

    def _store_report(self, ap_id: str, pairs, cells) -> str | None:
        unknown_cells = [c for c in cells if c not in self._cells]
        if unknown_cells:
            return f"unknown cell ids {sorted(unknown_cells)}"
        missing = [p for p in pairs if tuple(p) not in self.codebook.entries]
        if missing:
            return f"unknown (slot, cluster) tuples {sorted(missing)}"
        with self._lock:
            self._registrations[ap_id] = ApRegistration(
                ap_id, self.network_id, tuple(sorted(tuple(p) for p in pairs)), time.time()
            )
            self._proximity[ap_id] = frozenset(cells)
        return None


# ---------------------------------------------------------------------------
# Client.
# ---------------------------------------------------------------------------

class X2Client:
    """Blocking client with a per-operation deadline."""

    def __init__(
        self,
        address: tuple[str, int],
        network_id: int,
        ap_id: str = "ap-0",
        timeout_s: float = 2.0,
        version: int = PROTOCOL_VERSION,
    ) -> None:
        self.address = tuple(address)
        self.network_id = network_id
        self.ap_id = ap_id
        self.timeout_s = timeout_s
        self.version = version
        self._sock: socket.socket | None = None

    def connect(self) -> "X2Client":
        try:
            self._sock = socket.create_connection(self.address, timeout=self.timeout_s)
        except OSError as exc:
            raise X2ConnectivityError(f"cannot reach {self.address}: {exc}") from exc
        self._roundtrip(
            MessageType.HELLO,
            encode_hello(self.ap_id, self.network_id),
            MessageType.HELLO_ACK,
        )
        return self

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self) -> "X2Client":
        return self.connect()

    def __exit__(self, *exc) -> None:
        self.close()

    def _roundtrip(self, msg_type: int, payload: bytes, expected: int) -> bytes:
        if self._sock is None:
            raise X2Error("client is not connected")
        try:
            self._sock.sendall(encode_message(msg_type, payload, self.version))
            version, got, body = read_message(self._sock)
        except (OSError, X2WireError) as exc:
            raise X2ConnectivityError(f"transport failure: {exc}") from exc
        if got == MessageType.ERROR:
            code, detail = decode_error(body)
            raise X2ProtocolError(f"{ErrorCode(code).name}: {detail}")
        if got != expected or version != PROTOCOL_VERSION:
            raise X2ProtocolError(f"unexpected reply type {got} (version {version})")
        return body

    def fetch_codebook(self) -> Codebook:
        return deserialize_codebook(self._roundtrip(MessageType.GET_CODEBOOK, b"", MessageType.CODEBOOK))

    def report_proximity(self, pairs, cells) -> int:
        body = self._roundtrip(
            MessageType.REPORT_PROXIMITY,
            encode_report(self.ap_id, pairs, cells),
            MessageType.REPORT_ACK,
        )
        (count,) = struct.unpack("!H", body)
        return count


def fetch_codebook(
    address: tuple[str, int],
    network_id: int,
    ap_id: str = "ap-0",
    timeout_s: float = 2.0,
    retries: int = 3,
    backoff_s: float = 0.05,
) -> Codebook:
    """Fetch with bounded retry/backoff; X2ConnectivityError when exhausted."""
    last: Exception | None = None
    for attempt in range(retries):
        try:
            with X2Client(address, network_id, ap_id, timeout_s) as client:
                return client.fetch_codebook()
        except X2ConnectivityError as exc:
            last = exc
            time.sleep(backoff_s * (attempt + 1))
    raise X2ConnectivityError(f"gave up after {retries} attempts: {last}")
