"""Command-line faces: kernel listing, batch execution, chunk inspection,
the WebSocket service, and raw sends into a live session."""

from __future__ import annotations

import json
import os
import sys
from typing import List, Optional

import click

from . import kernels, rchunk
from .errors import KernelError, RboxError
from .service import Config, Service
from .session import OutputItem, OutputKind, RecordStatus, Session

ENV_TOKEN = "RBOX_TOKEN"

EXIT_OK = 0
EXIT_EXEC_ERROR = 1
EXIT_UNAVAILABLE = 2


@click.group()
def main():
    """rbox: run R-style code on managed kernels."""


@main.group("kernels")
def kernels_group():
    """Kernel spec management."""


@kernels_group.command("list")
def kernels_list():
    """List discoverable kernel specs."""
    errors = []
    specs = kernels.discover_kernelspecs(on_error=errors.append)
    for err in errors:
        click.echo(f"warning: {err}", err=True)
    for spec in specs:
        click.echo(f"{spec.name}\t{spec.display_name}\t{spec.language}")


def _read_source(path: str) -> str:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise click.exceptions.Exit(_fail(f"cannot read {path}: {exc}"))
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise click.exceptions.Exit(_fail(f"{path} is not valid UTF-8: {exc}"))


def _fail(message: str) -> int:
    click.echo(f"rbox: {message}", err=True)
    return EXIT_UNAVAILABLE


def _print_output(item: OutputItem) -> None:
    if item.kind is OutputKind.STREAM_STDOUT:
        click.echo(item.text or "", nl=False)
    elif item.kind is OutputKind.STREAM_STDERR:
        click.echo(item.text or "", nl=False, err=True)
    elif item.kind in (OutputKind.RESULT, OutputKind.DISPLAY):
        text = (item.data or {}).get("text/plain")
        if text is not None:
            click.echo(text)
    elif item.kind is OutputKind.ERROR:
        click.echo(f"{item.ename}: {item.evalue}", err=True)
        for line in item.traceback or []:
            click.echo(line, err=True)


def _chunks_for(source: str, granularity: str) -> List[str]:
    if granularity == "file":
        return [source]
    spans = rchunk.scan_statements(source)
    if granularity == "statements":
        return [rchunk.span_text(source, s) for s in spans]
    data = source.encode("utf-8")
    pieces = []
    for cell in rchunk.split_cells(source):
        if not cell.body:
            continue
        lo = cell.body[0].start_byte
        hi = cell.body[-1].end_byte
        pieces.append(data[lo:hi].decode("utf-8"))
    return pieces


@main.command("run")
@click.argument("file", type=click.Path())
@click.option("--kernel", required=True, help="kernelspec name")
@click.option("--granularity", type=click.Choice(["file", "statements", "cells"]),
              default="statements", show_default=True)
@click.option("--stop-on-error", is_flag=True, default=False)
def run_cmd(file, kernel, granularity, stop_on_error):
    """Execute FILE on a kernel and print its outputs. Exit status: 0 all ok,
    1 any execution error, 2 launch/setup failure."""
    source = _read_source(file)
    spec = kernels.find_kernelspec(kernel)
    if spec is None:
        raise click.exceptions.Exit(_fail(f"no kernelspec named {kernel!r}"))
    try:
        handle = kernels.launch(spec)
    except KernelError as exc:
        raise click.exceptions.Exit(_fail(f"kernel launch failed: {exc}"))
    session = Session(handle, stop_on_error=stop_on_error)
    any_error = False
    try:
        for piece in _chunks_for(source, granularity):
            try:
                record = session.execute(piece)
            except RboxError as exc:
                raise click.exceptions.Exit(_fail(f"execution failed: {exc}"))
            for item in record.outputs:
                _print_output(item)
            if record.status is not RecordStatus.OK:
                any_error = True
                if stop_on_error:
                    break
    finally:
        session.shutdown()
    raise click.exceptions.Exit(EXIT_EXEC_ERROR if any_error else EXIT_OK)


@main.command("chunk")
@click.argument("file", type=click.Path())
@click.option("--mode", type=click.Choice(["statements", "cells"]),
              default="statements", show_default=True)
def chunk_cmd(file, mode):
    """Print FILE's statement spans or cells as JSON lines."""
    source = _read_source(file)
    if mode == "statements":
        for span in rchunk.scan_statements(source):
            click.echo(json.dumps(span.to_dict()))
    else:
        for cell in rchunk.split_cells(source):
            click.echo(json.dumps(cell.to_dict()))
    raise click.exceptions.Exit(EXIT_OK)


@main.command("serve")
@click.option("--listen", default="127.0.0.1", show_default=True)
@click.option("--port", default=8787, show_default=True, type=int)
@click.option("--token", default=None,
              help=f"auth token (default: ${ENV_TOKEN} or random per run)")
@click.option("--kernel-dir", "kernel_dirs", multiple=True,
              help="extra kernelspec dir (repeatable; replaces default search)")
@click.option("--assets", "assets_dir", default=None,
              type=click.Path(file_okay=False),
              help="static assets dir for the browser console")
@click.option("--default-kernel", default=None,
              help="kernel used when 'rbox send' targets no session")
@click.option("--stop-on-error", is_flag=True, default=False)
@click.option("--allow-remote", is_flag=True, default=False,
              help="permit binding a non-loopback address")
def serve_cmd(listen, port, token, kernel_dirs, assets_dir, default_kernel,
              stop_on_error, allow_remote):
    """Run the local WebSocket RPC service (endpoint /rpc)."""
    token = token or os.environ.get(ENV_TOKEN) or None
    if assets_dir is None:
        bundled = os.path.join(os.path.dirname(__file__), "..", "..",
                               "frontend", "dist")
        if os.path.isdir(bundled):
            assets_dir = os.path.abspath(bundled)
    config = Config(listen=listen, port=port, token=token,
                    kernel_dirs=list(kernel_dirs) or None,
                    assets_dir=assets_dir, default_kernel=default_kernel,
                    stop_on_error=stop_on_error, allow_remote=allow_remote)
    try:
        service = Service(config)
        service.start()
    except (ValueError, OSError, RuntimeError) as exc:
        raise click.exceptions.Exit(_fail(str(exc)))
    click.echo(f"rbox service on ws://{listen}:{service.port}/rpc")
    click.echo(f"token: {service.token}")
    if assets_dir:
        click.echo(f"console: http://{listen}:{service.port}/")
    try:
        service._thread.join()
    except KeyboardInterrupt:
        service.stop()


@main.command("send")
@click.argument("code", required=False)
@click.option("--addr", default="127.0.0.1:8787", show_default=True)
@click.option("--session", "session_id", default=None,
              help="session id (default: the service's shared default session)")
@click.option("--token", default=None,
              help=f"auth token (default: ${ENV_TOKEN})")
@click.option("--file", "file_path", type=click.Path(), default=None,
              help="read the code to send from a file")
def send_cmd(code, addr, session_id, token, file_path):
    """Send CODE into a live session on a running service."""
    if (code is None) == (file_path is None):
        raise click.exceptions.Exit(_fail("pass exactly one of CODE or --file"))
    if file_path is not None:
        code = _read_source(file_path)
    token = token or os.environ.get(ENV_TOKEN)
    if not token:
        raise click.exceptions.Exit(_fail(f"no token: pass --token or set ${ENV_TOKEN}"))
    raise click.exceptions.Exit(_send(addr, session_id, token, code))


def _send(addr: str, session_id: Optional[str], token: str, code: str) -> int:
    from websockets.sync.client import connect as ws_connect
    uri = f"ws://{addr}/rpc"
    try:
        with ws_connect(uri) as conn:
            conn.send(json.dumps({"token": token}))
            ack = json.loads(conn.recv(timeout=10))
            if not ack.get("ok"):
                return _fail("authentication not acknowledged")
            params = {"code": code, "silent": False}
            if session_id is not None:
                params["session"] = session_id
            conn.send(json.dumps({"v": 1, "id": 1, "method": "execute",
                                  "params": params}))
            while True:
                frame = json.loads(conn.recv(timeout=120))
                if frame.get("id") == 1:
                    break
    except Exception as exc:
        return _fail(f"service unreachable or refused: {exc}")
    if "error" in frame:
        return _fail(f"rpc error {frame['error']['code']}: {frame['error']['message']}")
    record = frame["result"]["record"]
    for item in record["outputs"]:
        kind = item.get("kind")
        if kind == "stream_stdout":
            click.echo(item.get("text", ""), nl=False)
        elif kind == "stream_stderr":
            click.echo(item.get("text", ""), nl=False, err=True)
        elif kind in ("result", "display"):
            text = (item.get("data") or {}).get("text/plain")
            if text is not None:
                click.echo(text)
        elif kind == "error":
            click.echo(f"{item.get('ename')}: {item.get('evalue')}", err=True)
    return EXIT_OK if record["status"] == "ok" else EXIT_EXEC_ERROR


if __name__ == "__main__":
    main()
