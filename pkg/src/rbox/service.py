"""Local WebSocket JSON-RPC service driving live kernel sessions.

One endpoint, ``/rpc``. The first client frame must be ``{"token": ...}``;
a bad token closes the connection, a good one is acknowledged with
``{"v": 1, "ok": true}``. After that, requests are
``{"id": int, "method": str, "params": object}`` and are each answered by
exactly one ``{"v": 1, "id": ..., "result": ...}`` or
``{"v": 1, "id": ..., "error": {"code": int, "message": str}}``.

Any method that names a session subscribes the connection to that session's
event stream: ``{"v": 1, "event": ..., "session": ..., "payload": {...}}``
with a per-session monotonically increasing ``payload.seq``.

Error codes: 1 unknown method, 2 bad params, 3 unknown session,
4 kernel dead, 5 incomplete expression.

All other HTTP paths serve the bundled console assets when configured.
"""

from __future__ import annotations

import asyncio
import hmac as hmac_mod
import json
import mimetypes
import secrets
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Set

from websockets.asyncio.server import serve as ws_serve

from . import kernels, rchunk
from .errors import (IncompleteExpression, KernelDead, KernelError, QueueClosed,
                     RboxError)
from .session import Session

RPC_UNKNOWN_METHOD = 1
RPC_BAD_PARAMS = 2
RPC_UNKNOWN_SESSION = 3
RPC_KERNEL_DEAD = 4
RPC_INCOMPLETE_EXPRESSION = 5

_LOOPBACK_HOSTS = {"127.0.0.1", "::1", "localhost"}


@dataclass
class Config:
    listen: str = "127.0.0.1"
    port: int = 8787
    kernel_dirs: Optional[List[str]] = None  # None -> default search path
    token: Optional[str] = None              # None -> random per run
    stop_on_error: bool = False
    allow_remote: bool = False
    assets_dir: Optional[str] = None
    default_kernel: Optional[str] = None


class RpcError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        self.message = message
        super().__init__(message)


class _SessionEntry:
    def __init__(self, session_id: str, kernel_name: str):
        self.id = session_id
        self.kernel_name = kernel_name
        self.session: Optional[Session] = None
        self.seq = 0
        self.seq_lock = threading.Lock()
        self.subscribers: Set[asyncio.Queue] = set()


class Service:
    """Owns the sessions and the asyncio serving loop (which runs in its own
    thread so the rest of the system can stay synchronous)."""

    def __init__(self, config: Optional[Config] = None):
        self.config = config or Config()
        if not self.config.allow_remote and self.config.listen not in _LOOPBACK_HOSTS:
            raise ValueError(
                f"refusing to bind non-loopback address {self.config.listen!r} "
                "without the explicit remote override")
        self.token = self.config.token or secrets.token_urlsafe(16)
        self.port: Optional[int] = None
        self._entries: Dict[str, _SessionEntry] = {}
        self._entries_lock = threading.Lock()
        self._default_lock = threading.Lock()
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._thread: Optional[threading.Thread] = None
        self._started = threading.Event()
        self._stop: Optional[asyncio.Future] = None

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> None:
        self._thread = threading.Thread(target=self._serve_thread, daemon=True,
                                        name="rbox-service")
        self._thread.start()
        if not self._started.wait(timeout=15):
            raise RuntimeError("service failed to start")

    def _serve_thread(self) -> None:
        asyncio.run(self._serve_main())

    async def _serve_main(self) -> None:
        self._loop = asyncio.get_running_loop()
        self._stop = self._loop.create_future()
        async with ws_serve(self._handle_connection, self.config.listen,
                            self.config.port,
                            process_request=self._process_request) as server:
            self.port = server.sockets[0].getsockname()[1]
            self._started.set()
            await self._stop

    def stop(self) -> None:
        with self._entries_lock:
            entries = list(self._entries.values())
            self._entries.clear()
        for entry in entries:
            if entry.session is not None:
                entry.session.shutdown()
        if self._loop is not None and self._stop is not None:
            def _finish():
                if not self._stop.done():
                    self._stop.set_result(None)
            self._loop.call_soon_threadsafe(_finish)
        if self._thread is not None:
            self._thread.join(timeout=10)

    def run_forever(self) -> None:
        self.start()
        try:
            self._thread.join()
        except KeyboardInterrupt:
            self.stop()

    # -- static assets -----------------------------------------------------------

    def _process_request(self, connection, request):
        path = request.path.split("?", 1)[0]
        if path == "/rpc":
            return None  # continue the WebSocket handshake
        assets = self.config.assets_dir
        if not assets:
            return connection.respond(404, "no assets configured; RPC at /rpc\n")
        root = Path(assets).resolve()
        rel = path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            return connection.respond(404, "not found\n")
        response = connection.respond(200, "")
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        body = target.read_bytes()
        response.body = body
        del response.headers["Content-Type"]
        del response.headers["Content-Length"]
        response.headers["Content-Type"] = ctype
        response.headers["Content-Length"] = str(len(body))
        return response

    # -- event fan-out -------------------------------------------------------------

    def _fanout(self, entry: _SessionEntry, event: str, payload: dict) -> None:
        with entry.seq_lock:
            entry.seq += 1
            message = json.dumps({
                "v": 1,
                "event": event,
                "session": entry.id,
                "payload": {**payload, "seq": entry.seq},
            })
            subscribers = list(entry.subscribers)
        loop = self._loop
        if loop is None:
            return
        for q in subscribers:
            loop.call_soon_threadsafe(q.put_nowait, message)

    # -- connection handling ----------------------------------------------------------

    async def _handle_connection(self, connection) -> None:
        if connection.request.path.split("?", 1)[0] != "/rpc":
            await connection.close(code=1008, reason="rpc endpoint is /rpc")
            return
        try:
            first = await asyncio.wait_for(connection.recv(), timeout=10)
        except Exception:
            return
        if not self._check_token(first):
            await connection.close(code=1008, reason="bad token")
            return
        outgoing: asyncio.Queue = asyncio.Queue()
        await connection.send(json.dumps({"v": 1, "ok": True}))
        writer = asyncio.create_task(self._writer(connection, outgoing))
        pending: Set[asyncio.Task] = set()
        try:
            async for raw in connection:
                task = asyncio.create_task(self._serve_request(raw, outgoing, connection))
                pending.add(task)
                task.add_done_callback(pending.discard)
        finally:
            for task in pending:
                task.cancel()
            writer.cancel()
            self._unsubscribe_all(outgoing)

    def _check_token(self, raw) -> bool:
        try:
            frame = json.loads(raw)
        except (ValueError, TypeError):
            return False
        if not isinstance(frame, dict):
            return False
        supplied = frame.get("token")
        if not isinstance(supplied, str):
            return False
        return hmac_mod.compare_digest(supplied, self.token)

    async def _writer(self, connection, outgoing: asyncio.Queue) -> None:
        while True:
            message = await outgoing.get()
            await connection.send(message)

    def _unsubscribe_all(self, outgoing: asyncio.Queue) -> None:
        with self._entries_lock:
            entries = list(self._entries.values())
        for entry in entries:
            with entry.seq_lock:
                entry.subscribers.discard(outgoing)

    async def _serve_request(self, raw, outgoing: asyncio.Queue, connection) -> None:
        rid = None
        try:
            try:
                request = json.loads(raw)
                if not isinstance(request, dict):
                    raise ValueError("request is not an object")
                rid = request.get("id")
                method = request.get("method")
                params = request.get("params") or {}
                if not isinstance(rid, int):
                    raise ValueError("id must be an integer")
                if not isinstance(method, str):
                    raise ValueError("method must be a string")
                if not isinstance(params, dict):
                    raise ValueError("params must be an object")
            except (ValueError, TypeError) as exc:
                if isinstance(rid, int):
                    raise RpcError(RPC_BAD_PARAMS, f"malformed request: {exc}")
                return  # nothing sane to answer
            result = await asyncio.to_thread(self._dispatch, method, params, outgoing)
            await outgoing.put(json.dumps({"v": 1, "id": rid, "result": result}))
        except RpcError as exc:
            await outgoing.put(json.dumps({
                "v": 1, "id": rid,
                "error": {"code": exc.code, "message": exc.message}}))
        except Exception as exc:
            await outgoing.put(json.dumps({
                "v": 1, "id": rid,
                "error": {"code": RPC_KERNEL_DEAD, "message": f"internal: {exc}"}}))

    # -- method dispatch -----------------------------------------------------------------

    def _dispatch(self, method: str, params: dict, outgoing: asyncio.Queue):
        handler = getattr(self, f"_m_{method}", None)
        if handler is None:
            raise RpcError(RPC_UNKNOWN_METHOD, f"unknown method {method!r}")
        try:
            return handler(params, outgoing)
        except RpcError:
            raise
        except (KernelDead, QueueClosed, KernelError) as exc:
            raise RpcError(RPC_KERNEL_DEAD, str(exc)) from None
        except IncompleteExpression as exc:
            raise RpcError(RPC_INCOMPLETE_EXPRESSION, str(exc)) from None
        except (KeyError, TypeError, ValueError) as exc:
            raise RpcError(RPC_BAD_PARAMS, f"bad params: {exc}") from None

    def _search_dirs(self) -> Optional[List[str]]:
        return self.config.kernel_dirs

    def _resolve_entry(self, params: dict, outgoing: asyncio.Queue) -> _SessionEntry:
        session_id = params.get("session")
        if session_id is None:
            entry = self._default_entry(outgoing)
        else:
            with self._entries_lock:
                entry = self._entries.get(session_id)
            if entry is None:
                raise RpcError(RPC_UNKNOWN_SESSION, f"unknown session {session_id!r}")
        with entry.seq_lock:
            entry.subscribers.add(outgoing)
        return entry

    def _default_entry(self, outgoing: asyncio.Queue) -> _SessionEntry:
        with self._default_lock:
            with self._entries_lock:
                for entry in self._entries.values():
                    if entry.kernel_name == "__default__":
                        return entry
            kernel = self.config.default_kernel
            if kernel is None:
                specs = kernels.discover_kernelspecs(self._search_dirs())
                if not specs:
                    raise RpcError(RPC_BAD_PARAMS, "no kernels available")
                kernel = specs[0].name
            entry = self._create_session(kernel, outgoing, default=True)
            return entry

    def _create_session(self, kernel_name: str, outgoing: asyncio.Queue,
                        default: bool = False) -> _SessionEntry:
        spec = kernels.find_kernelspec(kernel_name, self._search_dirs())
        if spec is None:
            raise RpcError(RPC_BAD_PARAMS, f"no kernelspec named {kernel_name!r}")
        entry = _SessionEntry(uuid.uuid4().hex[:12],
                              "__default__" if default else kernel_name)
        with entry.seq_lock:
            entry.subscribers.add(outgoing)
        with self._entries_lock:
            self._entries[entry.id] = entry
        self._fanout(entry, "status", {"state": "starting"})
        try:
            handle = kernels.launch(spec)
        except KernelError:
            with self._entries_lock:
                self._entries.pop(entry.id, None)
            raise
        entry.session = Session(handle, stop_on_error=self.config.stop_on_error)
        entry.session.add_listener(
            lambda event, payload: self._fanout(entry, event, payload))
        self._fanout(entry, "status", {"state": "idle"})
        return entry

    @staticmethod
    def _session_of(entry: _SessionEntry) -> Session:
        if entry.session is None:
            raise RpcError(RPC_UNKNOWN_SESSION, "session still starting")
        return entry.session

    # each _m_* below runs on a worker thread, one per in-flight request

    def _m_listKernels(self, params, outgoing):
        specs = kernels.discover_kernelspecs(self._search_dirs())
        return {"kernels": [
            {"name": s.name, "display_name": s.display_name, "language": s.language}
            for s in specs]}

    def _m_createSession(self, params, outgoing):
        kernel = params["kernel"]
        if not isinstance(kernel, str):
            raise RpcError(RPC_BAD_PARAMS, "kernel must be a string")
        entry = self._create_session(kernel, outgoing)
        return {"session": entry.id}

    def _m_execute(self, params, outgoing):
        entry = self._resolve_entry(params, outgoing)
        code = params["code"]
        if not isinstance(code, str):
            raise RpcError(RPC_BAD_PARAMS, "code must be a string")
        silent = bool(params.get("silent", False))
        record = self._session_of(entry).execute(code, silent=silent)
        return {"record": record.to_dict()}

    def _m_interruptKernel(self, params, outgoing):
        entry = self._resolve_entry(params, outgoing)
        return {"acknowledged": self._session_of(entry).interrupt_current()}

    def _m_restartKernel(self, params, outgoing):
        entry = self._resolve_entry(params, outgoing)
        self._session_of(entry).restart()
        return {"ok": True}

    def _m_shutdownKernel(self, params, outgoing):
        entry = self._resolve_entry(params, outgoing)
        self._session_of(entry).shutdown()
        with self._entries_lock:
            self._entries.pop(entry.id, None)
        return {"ok": True}

    def _m_addWatch(self, params, outgoing):
        entry = self._resolve_entry(params, outgoing)
        expr = params["expr"]
        if not isinstance(expr, str):
            raise RpcError(RPC_BAD_PARAMS, "expr must be a string")
        watch = self._session_of(entry).add_watch(expr)
        return {"watch": watch.to_dict()}

    def _m_removeWatch(self, params, outgoing):
        entry = self._resolve_entry(params, outgoing)
        watch_id = params["id"]
        if not isinstance(watch_id, int):
            raise RpcError(RPC_BAD_PARAMS, "id must be an integer")
        return {"removed": self._session_of(entry).remove_watch(watch_id)}

    def _m_listWatches(self, params, outgoing):
        entry = self._resolve_entry(params, outgoing)
        return {"watches": self._session_of(entry).watch_snapshot()}

    def _m_chunk(self, params, outgoing):
        source = params["source"]
        mode = params.get("mode", "statements")
        if not isinstance(source, str):
            raise RpcError(RPC_BAD_PARAMS, "source must be a string")
        if mode == "statements":
            return {"statements": [s.to_dict() for s in rchunk.scan_statements(source)]}
        if mode == "cells":
            return {"cells": [c.to_dict() for c in rchunk.split_cells(source)]}
        raise RpcError(RPC_BAD_PARAMS, f"unknown mode {mode!r}")

    def _m_getHistory(self, params, outgoing):
        entry = self._resolve_entry(params, outgoing)
        return {"records": self._session_of(entry).history()}
