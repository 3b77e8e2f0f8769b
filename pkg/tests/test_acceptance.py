"""Acceptance suite: every release criterion at its stated scale.

One pass/fail line per criterion is printed in the terminal summary.
"""

import functools
import json
import os
import random
import signal
import threading
import time
from pathlib import Path

import pytest
from click.testing import CliRunner

from rbox.cli import main as cli_main
from rbox.errors import SignatureMismatch
from rbox.kernels import launch, shutdown
from rbox.rchunk import (Completeness, is_complete, scan_statements,
                         split_cells, tokenize)
from rbox.service import Config, Service
from rbox.session import OutputKind, RecordStatus, Session, WatchStatus
from rbox.wire import decode_message, encode_message, split_frames

from .conftest import ACCEPTANCE_RESULTS
from .gen import random_key, random_message
from .gen_r import random_fuzz_text, random_r_source
from .oracles import brute_force_statements, hmac_sha256_hex
from .test_service import Client

DATA = Path(__file__).parent / "data"


def criterion(name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                ACCEPTANCE_RESULTS.append((name, False))
                raise
            ACCEPTANCE_RESULTS.append((name, True))
            return result
        return wrapper
    return deco


@criterion("wire round-trip: 10,000 messages + 1,000 mutations all detected")
def test_wire_round_trip_and_mutation():
    rng = random.Random(0xA11CE)
    for _ in range(10_000):
        msg = random_message(rng)
        key = random_key(rng)
        assert decode_message(encode_message(msg, key), key,
                              channel=msg.channel) == msg

    detected = 0
    trials = 1_000
    for _ in range(trials):
        msg = random_message(rng)
        key = random_key(rng)
        data = bytearray(encode_message(msg, key))
        sig_len = int.from_bytes(data[4:8], "big")
        payload_start = 8 + sig_len + 4
        # mutate a byte strictly inside the payload frames (2-5); skip the
        # inter-frame length fields so the signature is what must catch it
        frames = split_frames(bytes(data))
        offsets = []
        pos = 8 + sig_len
        for frame in frames[1:]:
            pos += 4
            offsets.extend(range(pos, pos + len(frame)))
            pos += len(frame)
        if not offsets:
            detected += 1  # nothing mutable; cannot happen with real headers
            continue
        off = rng.choice(offsets)
        old = data[off]
        data[off] = (old + rng.randrange(1, 256)) % 256
        try:
            decode_message(bytes(data), key)
        except SignatureMismatch:
            detected += 1
    assert detected == trials, f"only {detected}/{trials} mutations detected"


@criterion("signature golden vector matches the independent HMAC oracle")
def test_signature_golden_vector():
    golden = json.loads((DATA / "golden_wire.json").read_text())
    from rbox.messages import KernelMessage, MessageHeader
    msg = KernelMessage(header=MessageHeader(**golden["header"]),
                        metadata=golden["metadata"], content=golden["content"])
    data = encode_message(msg, golden["key"])
    frames = split_frames(data)
    # the committed vector was produced by the long-hand RFC 2104 oracle;
    # recompute here as well so the chain is verified end to end
    recomputed = hmac_sha256_hex(bytes.fromhex(golden["key"]),
                                 b"".join(frames[1:]))
    assert recomputed == golden["signature_hex"]
    assert frames[0] == golden["signature_hex"].encode("ascii")
    assert data.hex() == golden["encoded_hex"]


@criterion("chunker equals brute-force oracle on 5,000 generated snippets")
def test_chunker_oracle_equivalence_generated():
    rng = random.Random(0xC0FFEE)
    for i in range(5_000):
        source = random_r_source(rng)
        spans = scan_statements(source)
        expected = brute_force_statements(source, is_complete, tokenize)
        got = [(s.start_byte, s.end_byte, s.complete) for s in spans]
        assert got == expected, f"case {i}: {source!r}"


@criterion("completeness matches the reference corpus at >= 99% agreement")
def test_chunker_curated_corpus_agreement():
    corpus = json.loads((DATA / "r_completeness_corpus.json").read_text())
    known = set(json.loads(
        (DATA / "known_limitations.json").read_text())["snippets"])
    assert len(corpus) >= 200
    disagreements = [e["code"] for e in corpus
                     if is_complete(e["code"]).value != e["verdict"]]
    agreement = 1 - len(disagreements) / len(corpus)
    assert agreement >= 0.99, f"agreement {agreement:.4f}"
    assert set(disagreements) <= known, \
        f"undocumented disagreements: {set(disagreements) - known}"


@criterion("fuzz totality: 100,000 inputs, zero crashes, 100 ms per input")
def test_fuzz_totality_100k():
    rng = random.Random(0xF022)
    worst = 0.0
    for i in range(100_000):
        text = random_fuzz_text(rng)
        t0 = time.monotonic()
        tokenize(text)
        scan_statements(text)
        split_cells(text)
        elapsed = time.monotonic() - t0
        worst = max(worst, elapsed)
        assert elapsed < 0.1, f"case {i} took {elapsed:.3f}s: {text!r}"
    assert worst < 0.1


@criterion("end-to-end lifecycle: execute/interrupt/restart/shutdown exact")
def test_end_to_end_lifecycle(calc_spec):
    session = Session(launch(calc_spec))
    try:
        rec = session.execute("1+2")
        assert rec.status is RecordStatus.OK
        assert rec.execution_count == 1
        assert [o.data["text/plain"] for o in rec.outputs
                if o.kind is OutputKind.RESULT] == ["3"]

        session.execute("x <- 41")
        rec = session.execute("x + 1")
        assert [o.data["text/plain"] for o in rec.outputs
                if o.kind is OutputKind.RESULT] == ["42"]

        # interrupt during sleep(10000) must terminate the record within 1 s
        started = threading.Event()
        result = {}

        def run():
            started.set()
            result["record"] = session.execute("sleep(10000)")

        t = threading.Thread(target=run)
        t.start()
        started.wait()
        while not any(r.status is RecordStatus.RUNNING for r in session.records):
            time.sleep(0.005)
        t0 = time.monotonic()
        assert session.interrupt_current() is True
        t.join(timeout=2)
        elapsed = time.monotonic() - t0
        assert not t.is_alive() and elapsed < 1.0, f"interrupt took {elapsed:.2f}s"
        assert result["record"].status is RecordStatus.ERROR
        assert [o.ename for o in result["record"].outputs
                if o.kind is OutputKind.ERROR] == ["Interrupted"]

        # restart: watch on x errors against the fresh kernel, counter resets
        watch = session.add_watch("x")
        session.refresh_watches()
        assert watch.last_status is WatchStatus.OK
        session.restart()
        deadline = time.monotonic() + 5
        while time.monotonic() < deadline and watch.last_status is WatchStatus.STALE:
            time.sleep(0.02)
        assert watch.last_status is WatchStatus.ERROR
        rec = session.execute("1+1")
        assert rec.execution_count == 1

        # shutdown: no children, no connection file
        pid = session.handle.pid
        path = session.handle.connection_file
    finally:
        session.shutdown()
    assert not os.path.exists(path)
    deadline = time.monotonic() + 10
    while time.monotonic() < deadline:
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            break
        time.sleep(0.05)
    else:
        pytest.fail("kernel process survived shutdown")


@criterion("watch semantics: ordered updates, silent, outside history")
def test_watch_semantics(calc_spec):
    session = Session(launch(calc_spec))
    try:
        session.execute("x <- 1; y <- 10")
        w1 = session.add_watch("x")
        w2 = session.add_watch("y")
        session.refresh_watches()
        assert (w1.last_value, w2.last_value) == ("1", "10")
        session.execute("x <- x + 1")
        assert (w1.last_value, w2.last_value) == ("2", "10")
        session.execute("y <- y * 2")
        assert (w1.last_value, w2.last_value) == ("2", "20")

        # counter untouched by all that watch traffic
        rec = session.execute("99")
        assert rec.execution_count == 4

        log_path = session.handle.connection_file + ".reqlog"
        with open(log_path) as fh:
            log = [json.loads(line) for line in fh if line.strip()]
        watch_reqs = [e for e in log if e["silent"]]
        assert watch_reqs, "no watch evaluations reached the kernel"
        for entry in watch_reqs:
            assert entry["store_history"] is False
            assert entry["execution_count"] is None
        history_codes = [r["code"] for r in session.history()]
        assert history_codes == ["x <- 1; y <- 10", "x <- x + 1",
                                 "y <- y * 2", "99"]
    finally:
        session.shutdown()


@criterion("service contract: dual-client streams, 1,000 chaotic RPC ids, auth")
def test_service_contract(kernel_dir):
    service = Service(Config(port=0, kernel_dirs=[kernel_dir], token="acc"))
    service.start()
    try:
        # unauthenticated frames never reach a method
        from websockets.sync.client import connect as ws_connect
        raw = ws_connect(f"ws://127.0.0.1:{service.port}/rpc")
        raw.send(json.dumps({"v": 1, "id": 9, "method": "createSession",
                             "params": {"kernel": "calc"}}))
        with pytest.raises(Exception):
            raw.recv(timeout=5)
        with service._entries_lock:
            assert service._entries == {}

        # dual-client identical ordered streams
        c1 = Client(service, token="acc")
        sid = c1.result("createSession", kernel="calc")["session"]
        c2 = Client(service, token="acc")
        c2.result("getHistory", session=sid)
        for code in ["a <- 2", "a * 3", "a + 100"]:
            c1.result("execute", session=sid, code=code)
        c1.drain_events(0.8)
        c2.drain_events(0.8)
        key = lambda evs: [(e["event"], e["payload"]["seq"],
                            json.dumps(e["payload"], sort_keys=True))
                           for e in evs if e["session"] == sid]
        s1, s2 = key(c1.events), key(c2.events)
        assert s2 == s1[len(s1) - len(s2):], "event streams diverged"

        # 1,000 randomized interleaved calls with mid-call kernel kills;
        # every id answered exactly once
        answered = []
        lock = threading.Lock()
        calls_per_client = 500

        def hammer(client, seed):
            rng = random.Random(seed)
            for i in range(calls_per_client):
                roll = rng.random()
                if roll < 0.3:
                    frame = client.call("listKernels", timeout=90)
                elif roll < 0.5:
                    frame = client.call("chunk", source="q <- 1\nq",
                                        mode="statements", timeout=90)
                elif roll < 0.8:
                    frame = client.call("execute", session=sid,
                                        code=f"{i}+{i}", timeout=90)
                elif roll < 0.9:
                    frame = client.call("getHistory", session=sid, timeout=90)
                else:
                    frame = client.call("listWatches", session=sid, timeout=90)
                assert ("result" in frame) != ("error" in frame)
                with lock:
                    answered.append(frame)

        threads = [threading.Thread(target=hammer, args=(c1, 1)),
                   threading.Thread(target=hammer, args=(c2, 2))]
        for t in threads:
            t.start()
        chaos = Client(service, token="acc")  # clients are single-threaded
        for _ in range(3):
            time.sleep(0.8)
            with service._entries_lock:
                entry = service._entries.get(sid)
            if entry and entry.session:
                try:
                    os.kill(entry.session.handle.process.pid, signal.SIGKILL)
                except ProcessLookupError:
                    pass
            time.sleep(0.4)
            try:
                chaos.call("restartKernel", session=sid, timeout=90)
            except Exception:
                pass
        chaos.close()
        for t in threads:
            t.join(timeout=300)
            assert not t.is_alive(), "client starved: some id never answered"
        assert len(answered) == 2 * calls_per_client
        c1.close()
        c2.close()
    finally:
        service.stop()


@criterion("CLI exit codes 0/1/2 and exact stdout for the calc file")
def test_cli_contract(kernel_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("RBOX_KERNEL_DIRS", kernel_dir)
    runner = CliRunner()

    two = tmp_path / "two.calc"
    two.write_text("x <- 1\nx + 1")
    res = runner.invoke(cli_main, ["run", str(two), "--kernel", "calc",
                                   "--granularity", "statements"])
    assert res.exit_code == 0
    assert res.stdout == "2\n"

    bad = tmp_path / "bad.calc"
    bad.write_text("1/0")
    res = runner.invoke(cli_main, ["run", str(bad), "--kernel", "calc"])
    assert res.exit_code == 1

    res = runner.invoke(cli_main, ["run", str(two), "--kernel", "missing"])
    assert res.exit_code == 2
