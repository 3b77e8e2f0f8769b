"""One kernel's interactive state: serialized execution queue, output
collection, watch expressions.

All kernel traffic runs on a single executor thread; reader threads for
iopub and shell route incoming messages into the executor's inbox, tagged
with a kernel epoch so traffic from a replaced kernel is never attributed
to the current one. Listener callbacks fire on the executor thread for
everything execution-ordered (busy, outputs, executeDone, watches, idle),
which is what gives every attached client an identical event order.
"""

from __future__ import annotations

import queue
import socket
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional

from . import kernels, rchunk
from .channels import heartbeat_probe
from .errors import (IncompleteExpression, KernelDead, ProtocolError, QueueClosed,
                     RelaunchFailed, SignatureMismatch)
from .kernels import KernelHandle, KernelState
from .messages import Channel, KernelMessage, make_header

OUTPUT_CAP_BYTES = 10 * 1024 * 1024
HEARTBEAT_INTERVAL = 0.5
HEARTBEAT_FAILURES = 2


class OutputKind(str, Enum):
    STREAM_STDOUT = "stream_stdout"
    STREAM_STDERR = "stream_stderr"
    RESULT = "result"
    DISPLAY = "display"
    ERROR = "error"


@dataclass
class OutputItem:
    kind: OutputKind
    data: Optional[dict] = None   # MIME-keyed map for result/display
    text: Optional[str] = None    # stream text
    ename: Optional[str] = None
    evalue: Optional[str] = None
    traceback: Optional[List[str]] = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value}
        if self.data is not None:
            d["data"] = self.data
        if self.text is not None:
            d["text"] = self.text
        if self.kind is OutputKind.ERROR:
            d["ename"] = self.ename
            d["evalue"] = self.evalue
            d["traceback"] = self.traceback or []
        return d

    def byte_size(self) -> int:
        size = 0
        if self.text:
            size += len(self.text.encode("utf-8", "replace"))
        if self.data:
            size += sum(len(str(v).encode("utf-8", "replace")) for v in self.data.values())
        return size


class RecordStatus(str, Enum):
    QUEUED = "queued"
    RUNNING = "running"
    OK = "ok"
    ERROR = "error"
    ABORTED = "aborted"

    @property
    def terminal(self) -> bool:
        return self in (RecordStatus.OK, RecordStatus.ERROR, RecordStatus.ABORTED)


@dataclass
class ExecutionRecord:
    code: str
    silent: bool
    request_msg_id: Optional[str] = None
    execution_count: Optional[int] = None
    status: RecordStatus = RecordStatus.QUEUED
    outputs: List[OutputItem] = field(default_factory=list)
    started: Optional[float] = None
    ended: Optional[float] = None
    done: threading.Event = field(default_factory=threading.Event, repr=False)
    _output_bytes: int = 0
    _truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "request_msg_id": self.request_msg_id,
            "code": self.code,
            "execution_count": self.execution_count,
            "status": self.status.value,
            "outputs": [o.to_dict() for o in self.outputs],
            "started": self.started,
            "ended": self.ended,
        }


class WatchStatus(str, Enum):
    OK = "ok"
    ERROR = "error"
    STALE = "stale"


@dataclass
class Watch:
    id: int
    expr: str
    last_value: Optional[str] = None
    last_status: WatchStatus = WatchStatus.STALE

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "expr": self.expr,
            "last_value": self.last_value,
            "last_status": self.last_status.value,
        }


@dataclass
class _ExecJob:
    record: ExecutionRecord


@dataclass
class _RefreshJob:
    emit_idle: bool = False


_STOP = object()

Listener = Callable[[str, dict], None]


class Session:
    """Owner of one kernel: queue, history, watches.

    Safe to call from any thread; internally one executor serializes all
    shell traffic.
    """

    def __init__(self, handle: KernelHandle, stop_on_error: bool = False,
                 username: str = "rbox"):
        self.handle = handle
        self.stop_on_error = stop_on_error
        self.username = username
        self.session_id = uuid.uuid4().hex
        self.records: List[ExecutionRecord] = []
        self.watches: List[Watch] = []
        self._watch_seq = 0
        self._lock = threading.RLock()
        self._listeners: List[Listener] = []
        self._jobs: queue.Queue = queue.Queue()
        self._inbox: queue.Queue = queue.Queue()
        self._epoch = 0
        self._closed = False
        self._restarting = False
        self._active = False
        self._dead_emitted = False
        self._executor = threading.Thread(target=self._run, daemon=True,
                                          name="rbox-session-exec")
        self._executor.start()
        self._start_readers()
        self._hb_stop = threading.Event()
        self._monitor = threading.Thread(target=self._heartbeat_loop, daemon=True,
                                         name="rbox-session-hb")
        self._monitor.start()

    # -- events --------------------------------------------------------------

    def add_listener(self, listener: Listener) -> Callable[[], None]:
        with self._lock:
            self._listeners.append(listener)
        def remove():
            with self._lock:
                if listener in self._listeners:
                    self._listeners.remove(listener)
        return remove

    def _emit(self, event: str, payload: dict) -> None:
        with self._lock:
            listeners = list(self._listeners)
        for listener in listeners:
            try:
                listener(event, payload)
            except Exception:
                pass

    # -- reader / monitor threads ---------------------------------------------

    def _start_readers(self) -> None:
        epoch = self._epoch
        channels = self.handle.channels
        for stream in (channels.iopub, channels.shell):
            threading.Thread(target=self._reader, args=(stream, epoch),
                             daemon=True, name=f"rbox-{stream.channel.value}-reader"
                             ).start()

    def _reader(self, stream, epoch: int) -> None:
        while True:
            try:
                msg = stream.recv(timeout=None)
            except SignatureMismatch:
                continue  # drop the message, keep the connection
            except ProtocolError:
                msg = None  # framing desync is unrecoverable: close
            except OSError:
                msg = None
            if msg is None:
                self._inbox.put((epoch, "eof", stream.channel))
                return
            self._inbox.put((epoch, "msg", msg))

    def _heartbeat_loop(self) -> None:
        failures = 0
        while not self._hb_stop.wait(HEARTBEAT_INTERVAL):
            if self._closed or self._restarting:
                failures = 0
                continue
            handle = self.handle
            if handle.state is not KernelState.ALIVE:
                continue
            try:
                alive = heartbeat_probe(handle.channels)
            except OSError:
                alive = False
            failures = 0 if alive else failures + 1
            if failures >= HEARTBEAT_FAILURES and not self._restarting:
                self._mark_dead()
                failures = 0

    def _mark_dead(self) -> None:
        with self._lock:
            if self.handle.state is KernelState.DEAD and self._dead_emitted:
                return
            self.handle.state = KernelState.DEAD
            # a replaced kernel going down is part of restart, not a death
            already = self._dead_emitted or self._restarting
            self._dead_emitted = True
        self._inbox.put((self._epoch, "dead", None))
        if not already:
            self._emit("status", {"state": "dead"})

    # -- public operations -----------------------------------------------------

    def execute(self, code: str, silent: bool = False) -> ExecutionRecord:
        """Blocking execute; returns the record in a terminal state."""
        record = self.submit(code, silent)
        record.done.wait()
        return record

    def submit(self, code: str, silent: bool = False) -> ExecutionRecord:
        with self._lock:
            if self._closed:
                raise QueueClosed("session is shutting down")
            record = ExecutionRecord(code=code, silent=silent)
            self.records.append(record)
            if self.handle.state is KernelState.DEAD and not self._restarting:
                record.status = RecordStatus.ABORTED
                record.ended = time.time()
                record.done.set()
                raise KernelDead("kernel is dead")
            self._jobs.put(_ExecJob(record))
        return record

    def add_watch(self, expr: str) -> Watch:
        if (rchunk.is_complete(expr) is not rchunk.Completeness.COMPLETE
                or len(rchunk.scan_statements(expr)) != 1):
            raise IncompleteExpression(f"not a single complete statement: {expr!r}")
        with self._lock:
            self._watch_seq += 1
            watch = Watch(id=self._watch_seq, expr=expr)
            self.watches.append(watch)
            idle = self._jobs.empty() and not self._active
        if idle:
            self._jobs.put(_RefreshJob())
        return watch

    def remove_watch(self, watch_id: int) -> bool:
        with self._lock:
            for i, w in enumerate(self.watches):
                if w.id == watch_id:
                    del self.watches[i]
                    removed = True
                    break
            else:
                removed = False
            snapshot = [w.to_dict() for w in self.watches]
        if removed:
            self._emit("watches", {"watches": snapshot})
        return removed

    def refresh_watches(self) -> List[Watch]:
        """Synchronous refresh: enqueue and wait for it to run."""
        if self.handle.state is KernelState.DEAD:
            raise KernelDead("kernel is dead")
        done = threading.Event()
        job = _RefreshJob()
        job.done = done  # type: ignore[attr-defined]
        self._jobs.put(job)
        done.wait()
        with self._lock:
            return list(self.watches)

    def interrupt_current(self) -> bool:
        """Interrupt whatever is running; queued records stay queued."""
        return kernels.interrupt(self.handle)

    def restart(self) -> None:
        """Replace the kernel process; abort pending queue, keep history and
        watches (marked stale, then refreshed)."""
        with self._lock:
            if self._closed:
                raise QueueClosed("session is shutting down")
            self._restarting = True
        self._emit("status", {"state": "starting"})
        aborted = self._drain_queue()
        for record in aborted:
            self._emit("executeDone", {"record": record.to_dict()})
        old = self.handle
        try:
            new_handle = kernels.shutdown(old, restart=True)
        except RelaunchFailed:
            with self._lock:
                self._restarting = False
            self._mark_dead()
            raise
        with self._lock:
            self._epoch += 1
            self.handle = new_handle
            self._dead_emitted = False
            for watch in self.watches:
                watch.last_status = WatchStatus.STALE
                watch.last_value = None
            self._restarting = False
        self._start_readers()
        self._jobs.put(_RefreshJob(emit_idle=True))

    def shutdown(self) -> None:
        """Stop the session and its kernel; idempotent."""
        with self._lock:
            if self._closed:
                return
            self._closed = True
        for record in self._drain_queue():
            self._emit("executeDone", {"record": record.to_dict()})
        self._hb_stop.set()
        self._jobs.put(_STOP)
        self._executor.join(timeout=10)
        kernels.shutdown(self.handle, restart=False)
        self._emit("status", {"state": "dead"})

    def history(self) -> List[dict]:
        with self._lock:
            return [r.to_dict() for r in self.records]

    def watch_snapshot(self) -> List[dict]:
        with self._lock:
            return [w.to_dict() for w in self.watches]

    # -- executor internals -----------------------------------------------------

    def _drain_queue(self) -> List[ExecutionRecord]:
        aborted = []
        while True:
            try:
                job = self._jobs.get_nowait()
            except queue.Empty:
                return aborted
            if isinstance(job, _ExecJob) and not job.record.status.terminal:
                job.record.status = RecordStatus.ABORTED
                job.record.ended = time.time()
                job.record.done.set()
                aborted.append(job.record)

    def _run(self) -> None:
        while True:
            job = self._jobs.get()
            if job is _STOP:
                return
            self._active = True
            try:
                self._process(job)
            finally:
                self._active = False

    def _process(self, job) -> None:
        if isinstance(job, _ExecJob):
            record = job.record
            if record.status.terminal:
                return
            self._run_execution(record)
            refreshed = False
            if (not record.silent
                    and record.status in (RecordStatus.OK, RecordStatus.ERROR)):
                if record.status is RecordStatus.ERROR and self.stop_on_error:
                    for r in self._drain_queue():
                        self._emit("executeDone", {"record": r.to_dict()})
                self._refresh_watches_now()
                refreshed = True
            if refreshed or record.status is not RecordStatus.ABORTED:
                self._emit("status", {"state": "idle"})
            # callers unblock only once the post-execution refresh has run
            record.done.set()
        elif isinstance(job, _RefreshJob):
            self._refresh_watches_now()
            if job.emit_idle:
                self._emit("status", {"state": "idle"})
            done = getattr(job, "done", None)
            if done is not None:
                done.set()

    def _append_output(self, record: ExecutionRecord, item: OutputItem) -> None:
        if record._truncated:
            return
        record._output_bytes += item.byte_size()
        if record._output_bytes > OUTPUT_CAP_BYTES:
            record._truncated = True
            marker = OutputItem(kind=OutputKind.STREAM_STDERR,
                                text="[output truncated: 10 MiB cap reached]")
            record.outputs.append(marker)
            self._emit("output", {"request_msg_id": record.request_msg_id,
                                  "item": marker.to_dict()})
            return
        record.outputs.append(item)
        self._emit("output", {"request_msg_id": record.request_msg_id,
                              "item": item.to_dict()})

    @staticmethod
    def _output_from_iopub(msg: KernelMessage) -> Optional[OutputItem]:
        content = msg.content
        if msg.msg_type == "stream":
            kind = (OutputKind.STREAM_STDOUT if content.get("name") == "stdout"
                    else OutputKind.STREAM_STDERR)
            return OutputItem(kind=kind, text=content.get("text", ""))
        if msg.msg_type == "execute_result":
            return OutputItem(kind=OutputKind.RESULT, data=content.get("data", {}))
        if msg.msg_type == "display_data":
            return OutputItem(kind=OutputKind.DISPLAY, data=content.get("data", {}))
        if msg.msg_type == "error":
            return OutputItem(kind=OutputKind.ERROR,
                              ename=content.get("ename", ""),
                              evalue=content.get("evalue", ""),
                              traceback=list(content.get("traceback", [])))
        return None

    def _make_execute_request(self, code: str, silent: bool,
                              store_history: bool) -> KernelMessage:
        return KernelMessage(
            header=make_header("execute_request", self.session_id, self.username),
            content={"code": code, "silent": silent, "store_history": store_history},
            channel=Channel.SHELL,
        )

    def _roundtrip(self, request: KernelMessage,
                   sink: Optional[Callable[[OutputItem], None]] = None):
        """Send one execute_request and collect until reply + idle.

        Returns (reply content or None-if-kernel-died, ordered OutputItems).
        """
        handle = self.handle
        epoch = self._epoch
        outputs: List[OutputItem] = []
        try:
            handle.channels.shell.send(request)
        except OSError:
            self._mark_dead()
            return None, outputs
        reply = None
        idle_seen = False
        while not (reply is not None and idle_seen):
            try:
                entry = self._inbox.get(timeout=0.5)
            except queue.Empty:
                if self.handle.state is KernelState.DEAD or self._epoch != epoch:
                    return None, outputs
                continue
            entry_epoch, kind, payload = entry
            if entry_epoch != epoch:
                continue
            if kind in ("eof", "dead"):
                self._mark_dead()
                return None, outputs
            msg: KernelMessage = payload
            if msg.parent_msg_id != request.header.msg_id:
                continue
            if msg.channel is Channel.IOPUB:
                if msg.msg_type == "status":
                    if msg.content.get("execution_state") == "idle":
                        idle_seen = True
                    continue
                item = self._output_from_iopub(msg)
                if item is not None:
                    outputs.append(item)
                    if sink is not None:
                        sink(item)
            elif msg.channel is Channel.SHELL and msg.msg_type == "execute_reply":
                reply = msg
        return reply.content, outputs

    def _run_execution(self, record: ExecutionRecord) -> None:
        if self.handle.state is KernelState.DEAD:
            record.status = RecordStatus.ABORTED
            record.ended = time.time()
            self._emit("executeDone", {"record": record.to_dict()})
            return
        self._emit("status", {"state": "busy"})
        record.status = RecordStatus.RUNNING
        record.started = time.time()
        request = self._make_execute_request(record.code, record.silent,
                                             store_history=not record.silent)
        record.request_msg_id = request.header.msg_id
        reply, _ = self._roundtrip(
            request, sink=lambda item: self._append_output(record, item))
        if reply is None:
            record.status = RecordStatus.ABORTED
        else:
            record.status = (RecordStatus.OK if reply.get("status") == "ok"
                             else RecordStatus.ERROR)
            if not record.silent:
                record.execution_count = reply.get("execution_count")
        record.ended = time.time()
        self._emit("executeDone", {"record": record.to_dict()})

    def _refresh_watches_now(self) -> None:
        with self._lock:
            snapshot = list(self.watches)
        if self.handle.state is KernelState.DEAD:
            return
        for watch in snapshot:
            request = self._make_execute_request(watch.expr, silent=True,
                                                 store_history=False)
            reply, outputs = self._roundtrip(request)
            if reply is None:
                return  # kernel died mid-refresh; watches stay stale
            value: Optional[str] = None
            status = WatchStatus.ERROR
            if reply.get("status") == "ok":
                for item in outputs:
                    if item.kind is OutputKind.RESULT and item.data:
                        value = item.data.get("text/plain")
                if value is None and isinstance(reply.get("data"), dict):
                    value = reply["data"].get("text/plain")
                status = WatchStatus.OK
            with self._lock:
                if watch in self.watches:  # discard result if removed meanwhile
                    watch.last_value = value
                    watch.last_status = status
        self._emit("watches", {"watches": self.watch_snapshot()})
