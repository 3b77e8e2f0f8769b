"""Message model: headers, messages, the msg_type registry, connection info.

The wire layout lives in `rbox.wire`; this module owns the data shapes and
the closed set of message types both sides may exchange.
"""

from __future__ import annotations

import datetime
import json
import re
import secrets
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

PROTOCOL_VERSION = "1.0"

_HEX_KEY_RE = re.compile(r"^[0-9a-f]{32}$")


class Channel(str, Enum):
    SHELL = "shell"
    IOPUB = "iopub"
    STDIN = "stdin"
    CONTROL = "control"
    HEARTBEAT = "heartbeat"


@dataclass
class MessageHeader:
    msg_id: str
    session: str
    username: str
    date: str
    msg_type: str
    version: str = PROTOCOL_VERSION

    def to_dict(self) -> dict:
        # Field order here fixes the canonical JSON key order.
        return {
            "msg_id": self.msg_id,
            "session": self.session,
            "username": self.username,
            "date": self.date,
            "msg_type": self.msg_type,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MessageHeader":
        return cls(
            msg_id=d["msg_id"],
            session=d["session"],
            username=d["username"],
            date=d["date"],
            msg_type=d["msg_type"],
            version=d.get("version", PROTOCOL_VERSION),
        )


def utc_now_iso() -> str:
    """UTC timestamp, ISO-8601 with milliseconds and a 'Z' suffix."""
    now = datetime.datetime.now(datetime.timezone.utc)
    return now.strftime("%Y-%m-%dT%H:%M:%S.") + f"{now.microsecond // 1000:03d}Z"


def make_header(msg_type: str, session: str, username: str = "rbox") -> MessageHeader:
    return MessageHeader(
        msg_id=str(uuid.uuid4()),
        session=session,
        username=username,
        date=utc_now_iso(),
        msg_type=msg_type,
    )


@dataclass
class KernelMessage:
    header: MessageHeader
    parent_header: Optional[MessageHeader] = None
    metadata: dict = field(default_factory=dict)
    content: dict = field(default_factory=dict)
    channel: Channel = Channel.SHELL

    @property
    def msg_type(self) -> str:
        return self.header.msg_type

    @property
    def parent_msg_id(self) -> Optional[str]:
        return self.parent_header.msg_id if self.parent_header else None


class Direction(str, Enum):
    TO_KERNEL = "client->kernel"
    TO_CLIENT = "kernel->client"


@dataclass(frozen=True)
class RegistryEntry:
    msg_type: str
    channel: Channel
    direction: Direction
    required_fields: frozenset


def _entry(msg_type, channel, direction, fields=()):
    return RegistryEntry(msg_type, channel, direction, frozenset(fields))


_REGISTRY = {
    e.msg_type: e
    for e in [
        _entry("kernel_info_request", Channel.SHELL, Direction.TO_KERNEL),
        _entry("kernel_info_reply", Channel.SHELL, Direction.TO_CLIENT),
        _entry("execute_request", Channel.SHELL, Direction.TO_KERNEL,
               ("code", "silent", "store_history")),
        _entry("execute_reply", Channel.SHELL, Direction.TO_CLIENT,
               ("status", "execution_count")),
        _entry("interrupt_request", Channel.CONTROL, Direction.TO_KERNEL),
        _entry("interrupt_reply", Channel.CONTROL, Direction.TO_CLIENT),
        _entry("shutdown_request", Channel.CONTROL, Direction.TO_KERNEL,
               ("restart",)),
        _entry("shutdown_reply", Channel.CONTROL, Direction.TO_CLIENT),
        _entry("status", Channel.IOPUB, Direction.TO_CLIENT,
               ("execution_state",)),
        _entry("stream", Channel.IOPUB, Direction.TO_CLIENT,
               ("name", "text")),
        _entry("execute_result", Channel.IOPUB, Direction.TO_CLIENT,
               ("execution_count", "data")),
        _entry("display_data", Channel.IOPUB, Direction.TO_CLIENT,
               ("data",)),
        _entry("error", Channel.IOPUB, Direction.TO_CLIENT,
               ("ename", "evalue", "traceback")),
    ]
}

EXECUTION_STATES = frozenset({"starting", "busy", "idle"})
STREAM_NAMES = frozenset({"stdout", "stderr"})


def message_registry() -> dict:
    """Mapping of msg_type -> RegistryEntry for every known message type."""
    return dict(_REGISTRY)


def registry_lookup(msg_type: str) -> Optional[RegistryEntry]:
    return _REGISTRY.get(msg_type)


@dataclass
class ConnectionInfo:
    ip: str
    shell_port: int
    iopub_port: int
    stdin_port: int
    control_port: int
    hb_port: int
    key: str
    kernel_name: str
    transport: str = "tcp"
    signature_scheme: str = "hmac-sha256"

    def ports(self) -> tuple:
        return (self.shell_port, self.iopub_port, self.stdin_port,
                self.control_port, self.hb_port)

    def port_for(self, channel: Channel) -> int:
        return {
            Channel.SHELL: self.shell_port,
            Channel.IOPUB: self.iopub_port,
            Channel.STDIN: self.stdin_port,
            Channel.CONTROL: self.control_port,
            Channel.HEARTBEAT: self.hb_port,
        }[channel]

    def validate(self) -> None:
        ports = self.ports()
        if len(set(ports)) != 5 or any(p <= 0 for p in ports):
            raise ValueError(f"ports must be five distinct non-zero values, got {ports}")
        if not _HEX_KEY_RE.match(self.key):
            raise ValueError("key must be exactly 32 lowercase hex characters")
        if self.transport != "tcp":
            raise ValueError(f"unsupported transport {self.transport!r}")
        if self.signature_scheme != "hmac-sha256":
            raise ValueError(f"unsupported signature scheme {self.signature_scheme!r}")

    def to_json(self) -> str:
        # Exact field names of the connection-file schema.
        return json.dumps(
            {
                "transport": self.transport,
                "ip": self.ip,
                "shell_port": self.shell_port,
                "iopub_port": self.iopub_port,
                "stdin_port": self.stdin_port,
                "control_port": self.control_port,
                "hb_port": self.hb_port,
                "key": self.key,
                "signature_scheme": self.signature_scheme,
                "kernel_name": self.kernel_name,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ConnectionInfo":
        d = json.loads(text)
        info = cls(
            ip=d["ip"],
            shell_port=d["shell_port"],
            iopub_port=d["iopub_port"],
            stdin_port=d["stdin_port"],
            control_port=d["control_port"],
            hb_port=d["hb_port"],
            key=d["key"],
            kernel_name=d.get("kernel_name", ""),
            transport=d.get("transport", "tcp"),
            signature_scheme=d.get("signature_scheme", "hmac-sha256"),
        )
        info.validate()
        return info


def fresh_key() -> str:
    """16 random bytes as 32 lowercase hex chars."""
    return secrets.token_bytes(16).hex()
