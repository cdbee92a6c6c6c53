"""Length-prefixed framing over an ordered byte channel.

Wire format of one frame::

    length : uint32 LE   (= 1 + len(payload))
    type   : uint8
    payload: bytes

Field elements travel as 8-byte little-endian unsigned integers.
"""

from __future__ import annotations

import enum
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

MAX_FRAME = 64 * 1024 * 1024
_LEN = struct.Struct("<I")


class TransportError(RuntimeError):
    pass


class ChannelClosed(TransportError):
    """The peer closed the stream, possibly in the middle of a frame."""


class FrameError(TransportError):
    pass


class PeerAborted(TransportError):
    pass


class FrameType(enum.IntEnum):
    CONFIG_HASH = 0x01
    LINEAR_MASKED = 0x02
    GC_LABELS = 0x03
    GC_OUTPUT_LABELS = 0x04
    BEAVER_OPEN = 0x05
    LOGITS = 0x06
    OFFLINE_MATERIAL = 0x07
    ABORT = 0x7F


class Frame(NamedTuple):
    type: FrameType
    payload: bytes

    def encode(self) -> bytes:
        return _LEN.pack(1 + len(self.payload)) + bytes([self.type]) + self.payload

    @property
    def wire_size(self) -> int:
        return 5 + len(self.payload)


# -- channels --------------------------------------------------------------------


class Channel:
    def send_bytes(self, data: bytes) -> None:
        raise NotImplementedError

    def recv_exact(self, n: int) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass


class _Pipe:
    def __init__(self):
        self.buf = bytearray()
        self.closed = False
        self.cond = threading.Condition()


class LoopbackChannel(Channel):
    """In-process endpoint; unbounded buffer, so sends never block."""

    def __init__(self, inbound: _Pipe, outbound: _Pipe):
        self._in, self._out = inbound, outbound

    def send_bytes(self, data: bytes) -> None:
        with self._out.cond:
            if self._out.closed:
                raise ChannelClosed("loopback peer closed")
            self._out.buf += data
            self._out.cond.notify_all()

    def recv_exact(self, n: int) -> bytes:
        pipe = self._in
        with pipe.cond:
            while len(pipe.buf) < n and not pipe.closed:
                pipe.cond.wait()
            if len(pipe.buf) < n:
                raise ChannelClosed(f"stream ended with {len(pipe.buf)} of {n} bytes")
            out = bytes(pipe.buf[:n])
            del pipe.buf[:n]
            return out

    def close(self) -> None:
        for pipe in (self._in, self._out):
            with pipe.cond:
                pipe.closed = True
                pipe.cond.notify_all()


def loopback_pair() -> tuple[LoopbackChannel, LoopbackChannel]:
    a_to_b, b_to_a = _Pipe(), _Pipe()
    return LoopbackChannel(b_to_a, a_to_b), LoopbackChannel(a_to_b, b_to_a)


class SocketChannel(Channel):
    def __init__(self, sock: socket.socket):
        self.sock = sock

    def send_bytes(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise ChannelClosed(f"send failed: {exc}") from exc

    def recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(min(n - len(buf), 1 << 20))
            except OSError as exc:
                raise ChannelClosed(f"recv failed: {exc}") from exc
            if not chunk:
                raise ChannelClosed(f"stream ended with {len(buf)} of {n} bytes")
            buf += chunk
        return bytes(buf)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def connect(host: str, port: int, timeout: float = 30.0) -> SocketChannel:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketChannel(sock)


def accept(host: str, port: int, timeout: float | None = None) -> SocketChannel:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as srv:
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(1)
        srv.settimeout(timeout)
        sock, _ = srv.accept()
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketChannel(sock)


# -- framing ---------------------------------------------------------------------


def send_frame(channel: Channel, frame: Frame) -> None:
    if 1 + len(frame.payload) > MAX_FRAME:
        raise FrameError(f"frame of {len(frame.payload)} bytes exceeds the 64 MiB limit")
    channel.send_bytes(frame.encode())


def recv_frame(channel: Channel) -> Frame:
    (length,) = _LEN.unpack(channel.recv_exact(4))
    if length < 1 or length > MAX_FRAME:
        raise FrameError(f"bad frame length {length}")
    body = channel.recv_exact(length)
    try:
        ftype = FrameType(body[0])
    except ValueError:
        raise FrameError(f"unknown frame type 0x{body[0]:02x}") from None
    return Frame(ftype, body[1:])


def serialize_elements(values) -> bytes:
    return np.asarray(values, dtype="<u8").ravel().tobytes()


def parse_elements(data: bytes) -> np.ndarray:
    if len(data) % 8:
        raise FrameError(f"element payload of {len(data)} bytes is not a multiple of 8")
    return np.frombuffer(data, dtype="<u8").astype(np.int64)


# -- transcripts -----------------------------------------------------------------


class Message(NamedTuple):
    direction: str  # "send" | "recv"
    type: FrameType
    size: int  # wire bytes including the 4-byte length prefix
    phase: str


@dataclass
class Transcript:
    messages: list[Message] = field(default_factory=list)
    phase: str = "online"

    def log(self, direction: str, frame: Frame) -> None:
        self.messages.append(Message(direction, frame.type, frame.wire_size, self.phase))

    def total_bytes(self, phase: str | None = None, direction: str | None = None) -> int:
        return sum(m.size for m in self.messages if (phase is None or m.phase == phase) and (direction is None or m.direction == direction))

    def rounds(self, phase: str | None = None) -> int:
        """Number of maximal same-direction runs."""
        runs, last = 0, None
        for m in self.messages:
            if phase is not None and m.phase != phase:
                continue
            if m.direction != last:
                runs += 1
                last = m.direction
        return runs


class Endpoint:
    """A channel plus a transcript; the protocol talks only to this."""

    def __init__(self, channel: Channel, transcript: Transcript | None = None):
        self.channel = channel
        self.transcript = transcript if transcript is not None else Transcript()

    def send(self, ftype: FrameType, payload: bytes = b"") -> None:
        frame = Frame(FrameType(ftype), payload)
        send_frame(self.channel, frame)
        self.transcript.log("send", frame)

    def recv(self, expect: FrameType | None = None) -> Frame:
        frame = recv_frame(self.channel)
        self.transcript.log("recv", frame)
        if frame.type == FrameType.ABORT:
            raise PeerAborted(frame.payload.decode(errors="replace") or "peer aborted")
        if expect is not None and frame.type != expect:
            raise FrameError(f"expected {FrameType(expect).name}, got {frame.type.name}")
        return frame

    def abort(self, reason: str) -> None:
        try:
            self.send(FrameType.ABORT, reason.encode()[:1024])
        except TransportError:
            pass

    def close(self) -> None:
        self.channel.close()
