"""Bundled deterministic kernel: full channel protocol, tiny integer
expression language.

Grammar: integer literals; identifiers; ``name <- expr``; ``+ - * /`` with
standard precedence and parentheses; an interruptible ``sleep(ms)`` builtin;
``;`` and newline separate statements. The value of the last statement is
returned as text/plain, except that an assignment-final program returns
nothing (assignments are invisible, matching REPL conventions). Division
truncates toward zero.

Run as a kernel process:  python -m rbox.loopback <connection_file>

Every execute_request is appended to ``<connection_file>.reqlog`` as one
JSON line, so tests can assert the flags each execution arrived with.
"""

from __future__ import annotations

import json
import re
import socket
import sys
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .channels import MessageStream
from .errors import MalformedFrame, ProtocolError
from .messages import Channel, ConnectionInfo, KernelMessage, make_header
from .wire import encode_message

LANGUAGE = "calc"
SLEEP_POLL_S = 0.01


class CalcError(Exception):
    def __init__(self, ename: str, evalue: str):
        self.ename = ename
        self.evalue = evalue
        super().__init__(f"{ename}: {evalue}")


@dataclass
class CalcState:
    variables: Dict[str, int] = field(default_factory=dict)
    execution_count: int = 0


_TOKEN_RE = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z_0-9]*)|(<-)|([-+*/();])|(\S))")


def _lex(code: str) -> List[Tuple[str, str]]:
    tokens = []
    for m in _TOKEN_RE.finditer(code):
        number, name, arrow, punct, bad = m.groups()
        if number is not None:
            tokens.append(("int", number))
        elif name is not None:
            tokens.append(("name", name))
        elif arrow is not None:
            tokens.append(("op", "<-"))
        elif punct is not None:
            tokens.append(("op", punct))
        elif bad is not None:
            raise CalcError("SyntaxError", f"unexpected character {bad!r}")
    return tokens


class _Parser:
    """Statement list over one lexed line-group; newlines were already
    normalized to ';' by the caller."""

    def __init__(self, tokens: List[Tuple[str, str]], state: CalcState,
                 interrupted: Optional[threading.Event]):
        self.tokens = tokens
        self.pos = 0
        self.state = state
        self.interrupted = interrupted

    def _peek(self) -> Optional[Tuple[str, str]]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _take(self) -> Tuple[str, str]:
        tok = self._peek()
        if tok is None:
            raise CalcError("SyntaxError", "unexpected end of input")
        self.pos += 1
        return tok

    def _expect(self, value: str) -> None:
        tok = self._peek()
        if tok is None or tok[1] != value:
            got = tok[1] if tok else "end of input"
            raise CalcError("SyntaxError", f"expected {value!r}, got {got!r}")
        self.pos += 1

    def run(self) -> Tuple[Optional[int], bool]:
        """(value of last statement, last statement was an assignment)"""
        value: Optional[int] = None
        assigned = False
        saw_stmt = False
        while True:
            while self._peek() is not None and self._peek()[1] == ";":
                self.pos += 1
            if self._peek() is None:
                break
            value, assigned = self._statement()
            saw_stmt = True
            tok = self._peek()
            if tok is not None and tok[1] != ";":
                raise CalcError("SyntaxError", f"unexpected {tok[1]!r}")
        if not saw_stmt:
            return None, True  # nothing to show
        return value, assigned

    def _statement(self) -> Tuple[int, bool]:
        tok = self._peek()
        nxt = self.tokens[self.pos + 1] if self.pos + 1 < len(self.tokens) else None
        if tok is not None and tok[0] == "name" and nxt is not None and nxt[1] == "<-":
            name = self._take()[1]
            self._take()  # <-
            value = self._expr()
            self.state.variables[name] = value
            return value, True
        return self._expr(), False

    def _expr(self) -> int:
        value = self._term()
        while True:
            tok = self._peek()
            if tok is None or tok[1] not in "+-":
                return value
            op = self._take()[1]
            rhs = self._term()
            value = value + rhs if op == "+" else value - rhs


    def _term(self) -> int:
        value = self._factor()
        while True:
            tok = self._peek()
            if tok is None or tok[1] not in "*/":
                return value
            op = self._take()[1]
            rhs = self._factor()
            if op == "*":
                value = value * rhs
            else:
                if rhs == 0:
                    raise CalcError("DivideByZero", "division by zero")
                quot = abs(value) // abs(rhs)  # truncate toward zero
                value = quot if (value >= 0) == (rhs >= 0) else -quot

    def _factor(self) -> int:
        tok = self._take()
        kind, text = tok
        if kind == "int":
            return int(text)
        if text == "-":
            return -self._factor()
        if text == "+":
            return self._factor()
        if text == "(":
            value = self._expr()
            self._expect(")")
            return value
        if kind == "name":
            nxt = self._peek()
            if nxt is not None and nxt[1] == "(":
                if text != "sleep":
                    raise CalcError("SyntaxError", f"unknown function {text!r}")
                self._take()  # (
                ms = self._expr()
                self._expect(")")
                self._sleep(ms)
                return ms
            if text not in self.state.variables:
                raise CalcError("UndefinedVariable", f"object {text!r} not found")
            return self.state.variables[text]
        raise CalcError("SyntaxError", f"unexpected {text!r}")

    def _sleep(self, ms: int) -> None:
        deadline = time.monotonic() + ms / 1000.0
        while time.monotonic() < deadline:
            if self.interrupted is not None and self.interrupted.is_set():
                raise CalcError("Interrupted", "execution interrupted")
            time.sleep(min(SLEEP_POLL_S, max(deadline - time.monotonic(), 0)))


def eval_code(state: CalcState, code: str,
              interrupted: Optional[threading.Event] = None
              ) -> Tuple[Optional[str], bool]:
    """Evaluate; returns (text of last value or None, visible flag)."""
    tokens = _lex(code.replace("\n", ";"))
    value, assigned = _Parser(tokens, state, interrupted).run()
    if value is None or assigned:
        return None, False
    return str(value), True


class LoopbackKernel:
    """Five listening sockets plus one evaluation path."""

    def __init__(self, info: ConnectionInfo, reqlog_path: Optional[str] = None):
        self.info = info
        self.key = info.key
        self.state = CalcState()
        self.session_id = uuid.uuid4().hex
        self.interrupted = threading.Event()
        self.shutdown_event = threading.Event()
        self.restart_requested = False
        self.reqlog_path = reqlog_path
        self._iopub_clients: List[socket.socket] = []
        self._iopub_lock = threading.Lock()
        self._eval_lock = threading.Lock()  # one evaluation at a time
        self._listeners: Dict[Channel, socket.socket] = {}

    # -- plumbing ----------------------------------------------------------

    def _bind(self, channel: Channel) -> socket.socket:
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((self.info.ip, self.info.port_for(channel)))
        server.listen(8)
        return server

    def bind_all(self) -> None:
        for channel in Channel:
            self._listeners[channel] = self._bind(channel)

    def _msg(self, msg_type: str, content: dict, parent: Optional[KernelMessage],
             channel: Channel) -> KernelMessage:
        return KernelMessage(
            header=make_header(msg_type, self.session_id, username="kernel"),
            parent_header=parent.header if parent else None,
            content=content,
            channel=channel,
        )

    def _broadcast(self, msg_type: str, content: dict,
                   parent: Optional[KernelMessage]) -> None:
        data = encode_message(self._msg(msg_type, content, parent, Channel.IOPUB),
                              self.key)
        with self._iopub_lock:
            alive = []
            for client in self._iopub_clients:
                try:
                    client.sendall(data)
                    alive.append(client)
                except OSError:
                    client.close()
            self._iopub_clients = alive

    def _log_request(self, entry: dict) -> None:
        if not self.reqlog_path:
            return
        with open(self.reqlog_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")
            fh.flush()

    # -- channel servers ----------------------------------------------------

    def _heartbeat_server(self) -> None:
        server = self._listeners[Channel.HEARTBEAT]
        while not self.shutdown_event.is_set():
            try:
                conn, _ = server.accept()
            except OSError:
                return
            threading.Thread(target=self._echo, args=(conn,), daemon=True).start()

    def _echo(self, conn: socket.socket) -> None:
        try:
            while True:
                data = conn.recv(4096)
                if not data:
                    return
                conn.sendall(data)
        except OSError:
            pass
        finally:
            conn.close()

    def _iopub_server(self) -> None:
        server = self._listeners[Channel.IOPUB]
        while not self.shutdown_event.is_set():
            try:
                conn, _ = server.accept()
            except OSError:
                return
            with self._iopub_lock:
                self._iopub_clients.append(conn)

    def _stdin_server(self) -> None:
        server = self._listeners[Channel.STDIN]
        holders = []
        while not self.shutdown_event.is_set():
            try:
                conn, _ = server.accept()
            except OSError:
                return
            holders.append(conn)  # open but unused

    def _serve_requests(self, channel: Channel, handler) -> None:
        server = self._listeners[channel]
        while not self.shutdown_event.is_set():
            try:
                conn, _ = server.accept()
            except OSError:
                return
            stream = MessageStream(conn, self.key, channel)
            threading.Thread(target=self._serve_connection,
                             args=(stream, handler), daemon=True).start()

    def _serve_connection(self, stream: MessageStream, handler) -> None:
        try:
            while True:
                try:
                    msg = stream.recv()
                except MalformedFrame:
                    break  # framing desync: close the connection
                except ProtocolError:
                    continue  # bad signature: drop message, keep reading
                if msg is None:
                    break
                handler(msg, stream)
        except OSError:
            pass
        finally:
            stream.close()

    # -- message handlers ----------------------------------------------------

    def _handle_shell(self, msg: KernelMessage, stream: MessageStream) -> None:
        if msg.msg_type == "kernel_info_request":
            reply = self._msg("kernel_info_reply",
                              {"language": LANGUAGE, "banner": "calc loopback kernel"},
                              msg, Channel.SHELL)
            stream.send(reply)
        elif msg.msg_type == "execute_request":
            self._execute(msg, stream)

    def _execute(self, msg: KernelMessage, stream: MessageStream) -> None:
        with self._eval_lock:
            self._execute_locked(msg, stream)

    def _execute_locked(self, msg: KernelMessage, stream: MessageStream) -> None:
        code = msg.content.get("code", "")
        silent = bool(msg.content.get("silent", False))
        self.interrupted.clear()
        if not silent:
            self.state.execution_count += 1
        count = self.state.execution_count
        self._log_request({
            "code": code,
            "silent": silent,
            "store_history": msg.content.get("store_history"),
            "execution_count": None if silent else count,
        })
        self._broadcast("status", {"execution_state": "busy"}, msg)
        status = "ok"
        error: Optional[CalcError] = None
        try:
            text, visible = eval_code(self.state, code, self.interrupted)
        except CalcError as exc:
            status, error = "error", exc
            text, visible = None, False
        if status == "ok" and visible and not silent:
            self._broadcast("execute_result",
                            {"execution_count": count,
                             "data": {"text/plain": text}},
                            msg)
        if error is not None:
            self._broadcast("error",
                            {"ename": error.ename, "evalue": error.evalue,
                             "traceback": [f"{error.ename}: {error.evalue}"]},
                            msg)
        content = {"status": status, "execution_count": count}
        if status == "ok" and visible:
            # the value also rides on the reply so silent callers (watches)
            # can read it without an iopub broadcast
            content["data"] = {"text/plain": text}
        if error is not None:
            content["ename"] = error.ename
            content["evalue"] = error.evalue
        stream.send(self._msg("execute_reply", content, msg, Channel.SHELL))
        self._broadcast("status", {"execution_state": "idle"}, msg)

    def _handle_control(self, msg: KernelMessage, stream: MessageStream) -> None:
        if msg.msg_type == "interrupt_request":
            self.interrupted.set()
            stream.send(self._msg("interrupt_reply", {}, msg, Channel.CONTROL))
        elif msg.msg_type == "shutdown_request":
            restart = bool(msg.content.get("restart", False))
            self.restart_requested = restart
            stream.send(self._msg("shutdown_reply", {"restart": restart},
                                  msg, Channel.CONTROL))
            self.shutdown_event.set()

    # -- lifecycle -----------------------------------------------------------

    def run(self) -> None:
        threads = [
            threading.Thread(target=self._heartbeat_server, daemon=True),
            threading.Thread(target=self._iopub_server, daemon=True),
            threading.Thread(target=self._stdin_server, daemon=True),
            threading.Thread(target=self._serve_requests,
                             args=(Channel.SHELL, self._handle_shell), daemon=True),
            threading.Thread(target=self._serve_requests,
                             args=(Channel.CONTROL, self._handle_control), daemon=True),
        ]
        for t in threads:
            t.start()
        self.shutdown_event.wait()
        time.sleep(0.05)  # let in-flight replies reach the OS buffers
        for server in self._listeners.values():
            try:
                server.close()
            except OSError:
                pass


def serve(connection_file: str) -> int:
    try:
        with open(connection_file, "r", encoding="utf-8") as fh:
            info = ConnectionInfo.from_json(fh.read())
    except (OSError, ValueError, KeyError) as exc:
        print(f"loopback kernel: bad connection file: {exc}", file=sys.stderr)
        return 1
    kernel = LoopbackKernel(info, reqlog_path=connection_file + ".reqlog")
    kernel.bind_all()
    kernel.run()
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m rbox.loopback <connection_file>", file=sys.stderr)
        return 1
    return serve(argv[0])


if __name__ == "__main__":
    sys.exit(main())
