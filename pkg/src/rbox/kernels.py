"""Kernel specs, process launch, and lifecycle transitions.

Interrupt and shutdown are message-based only (control channel), never OS
signals, so behavior is identical across platforms. Restart is a full
process replacement with a new key and new ports.
"""

from __future__ import annotations

import json
import os
import socket
import subprocess
import sys
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional

from .channels import ChannelSet, heartbeat_probe, open_channels
from .errors import (ConnectFailed, KernelDead, MalformedFrame, MalformedKernelspec,
                     ProtocolError, RelaunchFailed, SignatureMismatch, SpawnFailed,
                     StartupTimeout)
from .messages import Channel, ConnectionInfo, KernelMessage, fresh_key, make_header

STARTUP_TIMEOUT = 15.0
INTERRUPT_TIMEOUT = 2.0
SHUTDOWN_REPLY_TIMEOUT = 5.0
SHUTDOWN_EXIT_TIMEOUT = 5.0
PORT_RACE_RETRIES = 3

ENV_KERNEL_DIRS = "RBOX_KERNEL_DIRS"
CONNECTION_FILE_TOKEN = "{connection_file}"

_BUNDLED_DIR = Path(__file__).parent / "kernelspecs"


@dataclass
class KernelSpec:
    name: str
    display_name: str
    language: str
    argv: List[str]

    def validate(self) -> None:
        if not self.argv:
            raise ValueError("argv must be non-empty")
        if self.argv.count(CONNECTION_FILE_TOKEN) != 1:
            raise ValueError(f"argv must contain {CONNECTION_FILE_TOKEN} exactly once")


class KernelState(Enum):
    STARTING = "starting"
    ALIVE = "alive"
    DEAD = "dead"


@dataclass
class KernelHandle:
    spec: KernelSpec
    info: ConnectionInfo
    process: subprocess.Popen
    channels: ChannelSet
    connection_file: str
    state: KernelState = KernelState.STARTING
    control_lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def pid(self) -> int:
        return self.process.pid


def default_search_dirs() -> List[str]:
    """Bundled specs, then env dirs, then ./kernels, then the user config dir.

    Later directories shadow earlier ones on name collision, so the user
    config dir has the last word and bundled specs can always be overridden.
    """
    dirs = [str(_BUNDLED_DIR)]
    env = os.environ.get(ENV_KERNEL_DIRS, "")
    dirs.extend(p for p in env.split(os.pathsep) if p)
    dirs.append(os.path.join(".", "kernels"))
    dirs.append(os.path.join(_user_config_dir(), "rbox", "kernels"))
    return dirs


def _user_config_dir() -> str:
    if sys.platform == "win32":
        return os.environ.get("APPDATA", os.path.expanduser("~"))
    if sys.platform == "darwin":
        return os.path.expanduser("~/Library/Application Support")
    return os.environ.get("XDG_CONFIG_HOME", os.path.expanduser("~/.config"))


def discover_kernelspecs(search_dirs: Optional[List[str]] = None,
                         on_error=None) -> List[KernelSpec]:
    """Collect kernel.json specs; later dirs shadow earlier ones by name.

    Malformed specs are reported through on_error(MalformedKernelspec) and
    skipped; the rest are still returned, sorted by name.
    """
    if search_dirs is None:
        search_dirs = default_search_dirs()
    found = {}
    for root in search_dirs:
        rootp = Path(root)
        if not rootp.is_dir():
            continue
        for sub in sorted(rootp.iterdir()):
            kernel_json = sub / "kernel.json"
            if not sub.is_dir() or not kernel_json.is_file():
                continue
            try:
                with open(kernel_json, "r", encoding="utf-8") as fh:
                    raw = json.load(fh)
                spec = KernelSpec(
                    name=sub.name,
                    display_name=raw["display_name"],
                    language=raw["language"],
                    argv=list(raw["argv"]),
                )
                spec.validate()
            except (OSError, ValueError, KeyError, TypeError) as exc:
                err = MalformedKernelspec(str(kernel_json), str(exc))
                if on_error is not None:
                    on_error(err)
                continue
            found[spec.name] = spec
    return sorted(found.values(), key=lambda s: s.name)


def find_kernelspec(name: str, search_dirs: Optional[List[str]] = None
                    ) -> Optional[KernelSpec]:
    for spec in discover_kernelspecs(search_dirs):
        if spec.name == name:
            return spec
    return None


# Ports handed to concurrently alive kernels never overlap within a process.
_ports_in_use: set = set()
_ports_lock = threading.Lock()


def _allocate_ports(ip: str, count: int = 5) -> List[int]:
    with _ports_lock:
        ports: List[int] = []
        socks = []
        try:
            while len(ports) < count:
                s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
                s.bind((ip, 0))
                port = s.getsockname()[1]
                if port in _ports_in_use or port in ports:
                    s.close()
                    continue
                socks.append(s)
                ports.append(port)
        finally:
            for s in socks:
                s.close()
        _ports_in_use.update(ports)
        return ports


def _release_ports(info: ConnectionInfo) -> None:
    with _ports_lock:
        _ports_in_use.difference_update(info.ports())


def _write_connection_file(info: ConnectionInfo) -> str:
    tmpdir = tempfile.mkdtemp(prefix="rbox-kernel-")
    path = os.path.join(tmpdir, f"kernel-{uuid.uuid4().hex[:12]}.json")
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(info.to_json())
    return path


def _remove_connection_file(path: str) -> None:
    try:
        os.unlink(path)
    except OSError:
        pass


def launch(spec: KernelSpec, ip: str = "127.0.0.1",
           startup_timeout: float = STARTUP_TIMEOUT) -> KernelHandle:
    """Spawn a kernel and bring it to alive: ports, key, connection file,
    process, channels, kernel_info roundtrip, heartbeat."""
    spec.validate()
    last_exc: Optional[Exception] = None
    for _ in range(PORT_RACE_RETRIES):
        try:
            return _launch_once(spec, ip, startup_timeout)
        except StartupTimeout as exc:
            last_exc = exc
            if "exited" not in str(exc):
                raise
    raise last_exc if last_exc else StartupTimeout("kernel never came up")


def _launch_once(spec: KernelSpec, ip: str, startup_timeout: float) -> KernelHandle:
    ports = _allocate_ports(ip)
    info = ConnectionInfo(
        ip=ip,
        shell_port=ports[0], iopub_port=ports[1], stdin_port=ports[2],
        control_port=ports[3], hb_port=ports[4],
        key=fresh_key(), kernel_name=spec.name,
    )
    path = _write_connection_file(info)
    argv = [path if tok == CONNECTION_FILE_TOKEN else tok for tok in spec.argv]
    try:
        process = subprocess.Popen(argv)
    except OSError as exc:
        _remove_connection_file(path)
        _release_ports(info)
        raise SpawnFailed(f"{argv[0]}: {exc}") from None

    deadline = time.monotonic() + startup_timeout
    channels: Optional[ChannelSet] = None
    try:
        while channels is None:
            if process.poll() is not None:
                raise StartupTimeout(
                    f"kernel process exited with code {process.returncode} during startup")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise StartupTimeout(f"kernel not reachable within {startup_timeout}s")
            try:
                channels = open_channels(info, timeout=min(remaining, 0.5))
            except ConnectFailed:
                channels = None
        _kernel_info_roundtrip(channels, info, deadline)
        if not heartbeat_probe(channels):
            raise StartupTimeout("kernel heartbeat not answering after startup")
    except StartupTimeout:
        if channels is not None:
            channels.close()
        if process.poll() is None:
            process.kill()
            process.wait()
        _remove_connection_file(path)
        _release_ports(info)
        raise
    return KernelHandle(spec=spec, info=info, process=process, channels=channels,
                        connection_file=path, state=KernelState.ALIVE)


def _kernel_info_roundtrip(channels: ChannelSet, info: ConnectionInfo,
                           deadline: float) -> dict:
    request = KernelMessage(
        header=make_header("kernel_info_request", session=uuid.uuid4().hex),
        channel=Channel.SHELL,
    )
    channels.shell.send(request)
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise StartupTimeout("no kernel_info_reply before the startup deadline")
        try:
            reply = channels.shell.recv(timeout=remaining)
        except (socket.timeout, TimeoutError):
            raise StartupTimeout("no kernel_info_reply before the startup deadline")
        except SignatureMismatch:
            continue  # drop the message, keep waiting
        except MalformedFrame:
            raise StartupTimeout("shell stream corrupted during startup")
        if reply is None:
            raise StartupTimeout("shell connection closed during startup")
        if (reply.msg_type == "kernel_info_reply"
                and reply.parent_msg_id == request.header.msg_id):
            return reply.content


def interrupt(handle: KernelHandle, timeout: float = INTERRUPT_TIMEOUT) -> bool:
    """Message-based interrupt; True iff interrupt_reply arrives in time."""
    if handle.state is KernelState.DEAD:
        raise KernelDead("kernel already marked dead")
    request = KernelMessage(
        header=make_header("interrupt_request", session=uuid.uuid4().hex),
        channel=Channel.CONTROL,
    )
    with handle.control_lock:
        try:
            handle.channels.control.send(request)
            deadline = time.monotonic() + timeout
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                try:
                    reply = handle.channels.control.recv(timeout=remaining)
                except (socket.timeout, TimeoutError):
                    return False
                except SignatureMismatch:
                    continue
                except MalformedFrame:
                    raise KernelDead("control stream corrupted") from None
                if reply is None:
                    raise KernelDead("control connection closed")
                if (reply.msg_type == "interrupt_reply"
                        and reply.parent_msg_id == request.header.msg_id):
                    return True
        except OSError:
            handle.state = KernelState.DEAD
            raise KernelDead("control channel write failed") from None


def shutdown(handle: KernelHandle, restart: bool = False) -> Optional[KernelHandle]:
    """Graceful stop; with restart=True launch a fresh process (new key and
    ports). Idempotent on dead kernels."""
    spec = handle.spec
    if handle.state is not KernelState.DEAD:
        _shutdown_once(handle, restart)
    if not restart:
        return None
    try:
        return launch(spec, ip=handle.info.ip)
    except (SpawnFailed, StartupTimeout) as exc:
        raise RelaunchFailed(str(exc)) from None


def _shutdown_once(handle: KernelHandle, restart: bool) -> None:
    request = KernelMessage(
        header=make_header("shutdown_request", session=uuid.uuid4().hex),
        content={"restart": restart},
        channel=Channel.CONTROL,
    )
    with handle.control_lock:
        try:
            handle.channels.control.send(request)
            deadline = time.monotonic() + SHUTDOWN_REPLY_TIMEOUT
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                try:
                    reply = handle.channels.control.recv(timeout=remaining)
                except (socket.timeout, TimeoutError):
                    break
                except ProtocolError:
                    break  # tearing down anyway
                if reply is None or reply.msg_type == "shutdown_reply":
                    break
        except OSError:
            pass
    try:
        handle.process.wait(timeout=SHUTDOWN_EXIT_TIMEOUT)
    except subprocess.TimeoutExpired:
        handle.process.kill()
        handle.process.wait()
    handle.channels.close()
    _remove_connection_file(handle.connection_file)
    _release_ports(handle.info)
    handle.state = KernelState.DEAD
