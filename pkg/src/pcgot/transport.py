"""Framed, ordered byte channels: in-process loopback and TCP, with a session mux.

Wire format per frame: ``<u32 length><u8 msg_type><u16 session_id>`` followed by
``length`` payload bytes, all little-endian.  One :class:`Endpoint` wraps one
byte stream; :meth:`Endpoint.session` hands out per-session handles so two
protocol runs in opposite roles can share a connection.
"""

from __future__ import annotations

import enum
import socket
import struct
import threading
from collections import defaultdict, deque
from typing import NamedTuple

from .errors import FrameError, PeerClosed, ProtocolError, SessionError, TransportError

HEADER = struct.Struct("<IBH")
HEADER_BYTES = HEADER.size
MAX_FRAME = 64 << 20


class MsgType(enum.IntEnum):
    LEVEL_OT_CORR = 1
    LEVEL_OT_CT = 2
    PSI = 3
    CONTROL = 4


class Frame(NamedTuple):
    msg_type: int
    session_id: int
    payload: bytes


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_FRAME:
        raise FrameError(f"payload of {len(frame.payload)} bytes exceeds the {MAX_FRAME} byte cap")
    if frame.msg_type not in MsgType.__members__.values():
        raise FrameError(f"unknown message type {frame.msg_type}")
    if not 0 <= frame.session_id <= 0xFFFF:
        raise FrameError(f"session id {frame.session_id} does not fit in u16")
    return HEADER.pack(len(frame.payload), frame.msg_type, frame.session_id) + bytes(frame.payload)


def decode_header(raw: bytes) -> tuple[int, int, int]:
    length, msg_type, session_id = HEADER.unpack(raw)
    if length > MAX_FRAME:
        raise FrameError(f"frame length {length} exceeds the {MAX_FRAME} byte cap")
    if msg_type not in MsgType.__members__.values():
        raise FrameError(f"unknown message type {msg_type}")
    return length, msg_type, session_id


# ---------------------------------------------------------------------------
# Byte streams
# ---------------------------------------------------------------------------


class _Pipe:
    """One direction of an in-process byte stream."""

    def __init__(self) -> None:
        self._buf = bytearray()
        self._closed = False
        self._cv = threading.Condition()

    def write(self, data: bytes) -> None:
        with self._cv:
            if self._closed:
                raise PeerClosed("loopback pipe closed")
            self._buf += data
            self._cv.notify_all()

    def read_exact(self, n: int) -> bytes:
        with self._cv:
            while len(self._buf) < n:
                if self._closed:
                    raise PeerClosed("loopback peer closed")
                self._cv.wait()
            out = bytes(self._buf[:n])
            del self._buf[:n]
            return out

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify_all()


class LoopbackStream:
    def __init__(self, rx: _Pipe, tx: _Pipe) -> None:
        self._rx, self._tx = rx, tx

    def sendall(self, data: bytes) -> None:
        self._tx.write(data)

    def recv_exact(self, n: int) -> bytes:
        return self._rx.read_exact(n)

    def close(self) -> None:
        self._tx.close()
        self._rx.close()


class SocketStream:
    def __init__(self, sock: socket.socket, peer: str) -> None:
        self._sock = sock
        self.peer = peer

    def sendall(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send to {self.peer} failed: {exc}") from exc

    def recv_exact(self, n: int) -> bytes:
        view = bytearray(n)
        got = 0
        while got < n:
            try:
                k = self._sock.recv_into(memoryview(view)[got:])
            except OSError as exc:
                raise TransportError(f"receive from {self.peer} failed: {exc}") from exc
            if k == 0:
                raise PeerClosed(f"{self.peer} closed the connection")
            got += k
        return bytes(view)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


# ---------------------------------------------------------------------------
# Endpoint and sessions
# ---------------------------------------------------------------------------


class Endpoint:
    """Frame-level view of a byte stream, demultiplexed by session id.

    Writes are serialized by a lock.  Reads are performed by whichever waiting
    session gets there first; frames for other sessions are queued for them.
    """

    def __init__(self, stream) -> None:
        self._stream = stream
        self._wlock = threading.Lock()
        self._cv = threading.Condition()
        self._queues: dict[int, deque] = defaultdict(deque)
        self._reading = False
        self._error: Exception | None = None
        self._sessions: set[int] = set()
        self.bytes_sent: dict[int, int] = defaultdict(int)
        self.bytes_received: dict[int, int] = defaultdict(int)

    def send_frame(self, frame: Frame) -> None:
        raw = encode_frame(frame)
        with self._wlock:
            self._stream.sendall(raw)
            self.bytes_sent[frame.session_id] += len(raw)

    def _read_one(self) -> Frame:
        length, msg_type, session_id = decode_header(self._stream.recv_exact(HEADER_BYTES))
        payload = self._stream.recv_exact(length) if length else b""
        return Frame(msg_type, session_id, payload)

    def recv_frame(self, session_id: int = 0) -> Frame:
        while True:
            with self._cv:
                while True:
                    queue = self._queues[session_id]
                    if queue:
                        return queue.popleft()
                    if self._error is not None:
                        raise self._error
                    if not self._reading:
                        break
                    self._cv.wait()
                self._reading = True
            try:
                frame = self._read_one()
            except Exception as exc:
                with self._cv:
                    self._reading = False
                    self._error = exc
                    self._cv.notify_all()
                raise
            with self._cv:
                self._reading = False
                self.bytes_received[frame.session_id] += HEADER_BYTES + len(frame.payload)
                self._queues[frame.session_id].append(frame)
                self._cv.notify_all()

    def session(self, session_id: int = 0) -> Session:
        with self._cv:
            if session_id in self._sessions:
                raise SessionError(f"session {session_id} is already open on this endpoint")
            self._sessions.add(session_id)
        return Session(self, session_id)

    def release(self, session_id: int) -> None:
        with self._cv:
            self._sessions.discard(session_id)

    def close(self) -> None:
        self._stream.close()

    def __enter__(self) -> Endpoint:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class Session:
    """Typed message channel for one protocol run."""

    def __init__(self, endpoint: Endpoint, session_id: int) -> None:
        self.endpoint = endpoint
        self.session_id = session_id

    def send(self, msg_type: MsgType, payload: bytes) -> None:
        self.endpoint.send_frame(Frame(int(msg_type), self.session_id, payload))

    def recv(self, expected: MsgType | None = None) -> bytes:
        frame = self.endpoint.recv_frame(self.session_id)
        if expected is not None and frame.msg_type != expected:
            raise ProtocolError(
                f"session {self.session_id}: expected {MsgType(expected).name}, "
                f"got {MsgType(frame.msg_type).name}")
        return frame.payload

    @property
    def bytes_sent(self) -> int:
        return self.endpoint.bytes_sent[self.session_id]

    def close(self) -> None:
        self.endpoint.release(self.session_id)


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------


def open_loopback() -> tuple[Endpoint, Endpoint]:
    ab, ba = _Pipe(), _Pipe()
    return Endpoint(LoopbackStream(ba, ab)), Endpoint(LoopbackStream(ab, ba))


class TcpListener:
    def __init__(self, host: str = "127.0.0.1", port: int = 0, timeout: float | None = 30.0) -> None:
        self.timeout = timeout
        try:
            self._sock = socket.create_server((host, port))
        except OSError as exc:
            raise TransportError(f"cannot listen on {host}:{port}: {exc}") from exc
        self._sock.settimeout(timeout)
        self.address = self._sock.getsockname()[:2]

    def accept(self) -> Endpoint:
        try:
            conn, addr = self._sock.accept()
        except socket.timeout as exc:
            raise TransportError(f"no peer connected to {self.address[0]}:{self.address[1]} "
                                 f"within {self.timeout}s") from exc
        except OSError as exc:
            raise TransportError(f"accept on {self.address[0]}:{self.address[1]} failed: {exc}") from exc
        conn.settimeout(None)
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return Endpoint(SocketStream(conn, f"{addr[0]}:{addr[1]}"))

    def close(self) -> None:
        self._sock.close()


def tcp_connect(host: str, port: int, timeout: float = 10.0) -> Endpoint:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return Endpoint(SocketStream(sock, f"{host}:{port}"))
