"""Byte-stream transports and the frame channel.

Both endpoints speak through a FrameChannel, which owns encoding, header
validation, sequence checking, direction whitelisting and ledger updates.
The loopback transport couples two channels with in-memory queues (used
by every oracle test: deterministic, zero latency); the TCP transport
carries the identical bytes over a socket.
"""

import queue
import socket
import struct

from ..errors import FramingError, ProtocolError, TransportError
from .frames import (C2D_TYPES, D2C_TYPES, HEADER_LEN, MAGIC, VERSION, Frame,
                     MessageType, decode_frame, decode_tensors, encode_frame)
from .ledger import TrafficLedger

_LEN_OFF = HEADER_LEN - 4  # payload_len sits in the last 4 header bytes


class LoopbackConn:
    """One end of an in-process byte stream."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float = 30.0):
        self.inbox = inbox
        self.outbox = outbox
        self.timeout = timeout
        self._buf = b""
        self.closed = False

    def send_bytes(self, data: bytes):
        if self.closed:
            raise TransportError("connection closed")
        self.outbox.put(data)

    def recv_bytes(self, n: int) -> bytes:
        while len(self._buf) < n:
            try:
                chunk = self.inbox.get(timeout=self.timeout)
            except queue.Empty:
                raise TransportError("loopback receive timed out") from None
            if chunk is None:
                raise TransportError("peer closed the loopback")
            self._buf += chunk
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def close(self):
        if not self.closed:
            self.closed = True
            self.outbox.put(None)


def loopback_pair(timeout: float = 30.0):
    a2b: queue.Queue = queue.Queue()
    b2a: queue.Queue = queue.Queue()
    return LoopbackConn(b2a, a2b, timeout), LoopbackConn(a2b, b2a, timeout)


class SocketConn:
    def __init__(self, sock: socket.socket):
        self.sock = sock

    def send_bytes(self, data: bytes):
        try:
            self.sock.sendall(data)
        except OSError as e:
            raise TransportError(f"socket send failed: {e}") from None

    def recv_bytes(self, n: int) -> bytes:
        chunks = []
        got = 0
        while got < n:
            try:
                chunk = self.sock.recv(n - got)
            except OSError as e:
                raise TransportError(f"socket recv failed: {e}") from None
            if not chunk:
                raise TransportError("socket closed mid-frame")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class FrameChannel:
    """Framed, whitelisted, ledger-accounted view of a byte stream.

    `side` is which node this channel belongs to: a 'device' channel sends
    d2c and receives c2d, a 'cloud' channel the reverse. Frames a side is
    not allowed to receive abort the session with a ProtocolError.
    """

    def __init__(self, conn, side: str, ledger: TrafficLedger | None = None,
                 tap=None):
        if side not in ("device", "cloud"):
            raise ValueError("side must be device or cloud")
        self.conn = conn
        self.side = side
        self.ledger = ledger if ledger is not None else TrafficLedger()
        self.tap = tap
        self.send_seq = 0
        self._last_recv_seq = -1

    def _direction_out(self) -> str:
        return "d2c" if self.side == "device" else "c2d"

    def _allowed_out(self):
        return D2C_TYPES if self.side == "device" else C2D_TYPES

    def _allowed_in(self):
        return C2D_TYPES if self.side == "device" else D2C_TYPES

    def send(self, frame: Frame, raw_bits: int = 0, n_tensors: int = 0,
             layer_for_ledger: int | None = None, overflow: int = 0):
        if frame.msg_type not in self._allowed_out():
            raise ProtocolError(
                f"{self.side} may not send {MessageType(frame.msg_type).name}")
        frame.seq = self.send_seq
        self.send_seq += 1
        data = encode_frame(frame)
        self.ledger.record(self._direction_out(), len(data), raw_bits,
                           layer_for_ledger, n_tensors, overflow)
        if self.tap is not None:
            self.tap(self._direction_out(), frame, data)
        self.conn.send_bytes(data)

    def recv(self) -> tuple[Frame, list, int]:
        """Receive one frame. Returns (frame, tensors, raw bits)."""
        header = self.conn.recv_bytes(HEADER_LEN)
        if header[:4] != MAGIC:
            raise ProtocolError(f"bad magic {header[:4]!r}")
        if header[4] != VERSION:
            raise ProtocolError(f"unsupported protocol version {header[4]}")
        (plen,) = struct.unpack_from("<I", header, _LEN_OFF)
        payload = self.conn.recv_bytes(plen) if plen else b""
        frame = decode_frame(header + payload)
        if frame.msg_type not in self._allowed_in():
            raise ProtocolError(
                f"{self.side} received disallowed {MessageType(frame.msg_type).name}")
        if frame.seq <= self._last_recv_seq:
            raise ProtocolError(
                f"sequence regressed: {frame.seq} after {self._last_recv_seq}")
        self._last_recv_seq = frame.seq
        direction = "c2d" if self.side == "device" else "d2c"
        tensors, raw_bits, _ = ([], 0, 0)
        if frame.msg_type not in (MessageType.Hello, MessageType.HelloAck,
                                  MessageType.Close, MessageType.ErrorMsg):
            tensors, raw_bits, _ = decode_tensors(frame.payload)
        layer = frame.layer if frame.layer != 0xFFFF else None
        self.ledger.record(direction, HEADER_LEN + plen, raw_bits, layer, len(tensors))
        if self.tap is not None:
            self.tap(direction, frame, header + payload)
        if frame.msg_type == MessageType.ErrorMsg:
            raise ProtocolError(f"peer error: {frame.payload.decode('utf-8', 'replace')}")
        return frame, tensors, raw_bits

    def close(self):
        self.conn.close()


class CaptureTap:
    """Records every frame crossing a channel; writable as a capture file."""

    def __init__(self):
        self.records: list[tuple[str, Frame, bytes]] = []

    def __call__(self, direction: str, frame: Frame, data: bytes):
        self.records.append((direction, frame, data))

    def write(self, path):
        with open(path, "wb") as fh:
            for _, _, data in self.records:
                fh.write(data)


def read_capture(path) -> list[Frame]:
    """Parse a capture file back into frames, validating as it goes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    frames = []
    off = 0
    while off < len(blob):
        if off + HEADER_LEN > len(blob):
            raise FramingError("trailing bytes do not form a frame header")
        (plen,) = struct.unpack_from("<I", blob, off + _LEN_OFF)
        end = off + HEADER_LEN + plen
        if end > len(blob):
            raise FramingError("capture truncated mid-frame")
        frames.append(decode_frame(blob[off:end]))
        off = end
    return frames
