"""TCP transport for the five kernel channels.

shell/control carry request-reply message streams, iopub is a read-only
broadcast stream, stdin is opened but unused, heartbeat is a raw echo
socket. Each connection serializes its reads and its writes independently.
"""

from __future__ import annotations

import os
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConnectFailed, MalformedFrame
from .messages import Channel, ConnectionInfo, KernelMessage
from .wire import FRAME_COUNT, MAX_FRAME_BYTES, encode_message, frames_to_message

CONNECT_TIMEOUT = 10.0
HEARTBEAT_TIMEOUT = 0.5

_U32 = struct.Struct(">I")


def recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    """Read exactly n bytes; None on clean EOF at a message boundary."""
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if not buf:
                return None
            raise MalformedFrame("connection closed mid-message")
        buf.extend(chunk)
    return bytes(buf)


class MessageStream:
    """One framed message connection. Reads and writes each hold their own lock."""

    def __init__(self, sock: socket.socket, key: str, channel: Channel):
        self.sock = sock
        self.key = key
        self.channel = channel
        self._rlock = threading.Lock()
        self._wlock = threading.Lock()
        self._closed = False

    def send(self, msg: KernelMessage) -> None:
        data = encode_message(msg, self.key)
        with self._wlock:
            self.sock.sendall(data)

    def recv(self, timeout: Optional[float] = None) -> Optional[KernelMessage]:
        """One message, or None on clean EOF.

        Raises socket.timeout when nothing arrives in time, MalformedFrame on
        framing violations (the caller must close), SignatureMismatch on bad
        HMAC (the caller may keep reading).
        """
        with self._rlock:
            self.sock.settimeout(timeout)
            head = recv_exact(self.sock, 4)
            if head is None:
                return None
            (count,) = _U32.unpack(head)
            if count != FRAME_COUNT:
                raise MalformedFrame(f"frame count {count}, expected {FRAME_COUNT}")
            frames = []
            for i in range(FRAME_COUNT):
                lenfield = recv_exact(self.sock, 4)
                if lenfield is None:
                    raise MalformedFrame("connection closed mid-message")
                (length,) = _U32.unpack(lenfield)
                if length >= MAX_FRAME_BYTES:
                    raise MalformedFrame(
                        f"frame {i + 1} declares {length} bytes, over the 64 MiB cap")
                frame = recv_exact(self.sock, length) if length else b""
                if frame is None:
                    raise MalformedFrame("connection closed mid-message")
                frames.append(frame)
        return frames_to_message(frames, self.key, self.channel)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


@dataclass
class ChannelSet:
    shell: MessageStream
    iopub: MessageStream
    stdin: MessageStream
    control: MessageStream
    heartbeat: socket.socket
    hb_lock: threading.Lock = field(default_factory=threading.Lock)

    def close(self) -> None:
        for stream in (self.shell, self.iopub, self.stdin, self.control):
            stream.close()
        try:
            self.heartbeat.close()
        except OSError:
            pass


def _connect(ip: str, port: int, channel: Channel, deadline: float) -> socket.socket:
    last_err: Optional[Exception] = None
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise ConnectFailed(channel.value, str(last_err) if last_err else "timed out")
        try:
            return socket.create_connection((ip, port), timeout=min(remaining, 1.0))
        except OSError as exc:
            last_err = exc
            time.sleep(min(0.05, max(deadline - time.monotonic(), 0)))


def open_channels(info: ConnectionInfo, timeout: float = CONNECT_TIMEOUT) -> ChannelSet:
    """Establish all five connections; retries within one shared deadline."""
    info.validate()  # invariant violations rejected before any connect
    deadline = time.monotonic() + timeout
    socks = {}
    try:
        for channel in (Channel.SHELL, Channel.IOPUB, Channel.STDIN,
                        Channel.CONTROL, Channel.HEARTBEAT):
            socks[channel] = _connect(info.ip, info.port_for(channel), channel, deadline)
    except ConnectFailed:
        for s in socks.values():
            s.close()
        raise
    for s in socks.values():
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return ChannelSet(
        shell=MessageStream(socks[Channel.SHELL], info.key, Channel.SHELL),
        iopub=MessageStream(socks[Channel.IOPUB], info.key, Channel.IOPUB),
        stdin=MessageStream(socks[Channel.STDIN], info.key, Channel.STDIN),
        control=MessageStream(socks[Channel.CONTROL], info.key, Channel.CONTROL),
        heartbeat=socks[Channel.HEARTBEAT],
    )


def heartbeat_probe(channels: ChannelSet, timeout: float = HEARTBEAT_TIMEOUT) -> bool:
    """Write 8 random bytes; alive iff the identical bytes echo back in time."""
    probe = os.urandom(8)
    with channels.hb_lock:
        try:
            channels.heartbeat.settimeout(timeout)
            channels.heartbeat.sendall(probe)
            echoed = b""
            deadline = time.monotonic() + timeout
            while len(echoed) < 8:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                channels.heartbeat.settimeout(remaining)
                chunk = channels.heartbeat.recv(8 - len(echoed))
                if not chunk:
                    return False
                echoed += chunk
        except OSError:
            return False
    return echoed == probe
