import { describe, expect, it } from "vitest";

import { RpcEvent } from "../src/protocol.js";
import { SessionView } from "../src/view.js";

const evt = (event: string, seq: number,
             payload: Record<string, unknown> = {}, session = "s1"): RpcEvent =>
  ({ v: 1, event, session, payload: { ...payload, seq } });

const output = (seq: number, text: string, msgId = "m1") =>
  evt("output", seq, {
    request_msg_id: msgId,
    item: { kind: "result", data: { "text/plain": text } },
  });

function executionStream(): RpcEvent[] {
  return [
    evt("status", 1, { state: "busy" }),
    output(2, "3"),
    evt("executeDone", 3, {
      record: {
        request_msg_id: "m1", code: "1+2", execution_count: 1, status: "ok",
        outputs: [], started: 0, ended: 1,
      },
    }),
    evt("watches", 4, {
      watches: [{ id: 1, expr: "x", last_value: "7", last_status: "ok" }],
    }),
    evt("status", 5, { state: "idle" }),
  ];
}

describe("SessionView", () => {
  it("renders outputs in event seq order", () => {
    const view = new SessionView("s1");
    const stream = [
      evt("status", 1, { state: "busy" }),
      output(2, "a"), output(3, "b"), output(4, "c"),
      evt("status", 5, { state: "idle" }),
    ];
    for (const e of stream) view.applyEvent(e);
    expect(view.renderedOutputOrder()).toEqual([2, 3, 4]);
    expect(view.outputs.map((o) => view.outputText(o))).toEqual(["a", "b", "c"]);
  });

  it("lamp reflects the latest status event", () => {
    const view = new SessionView("s1");
    for (const e of executionStream()) {
      view.applyEvent(e);
      if (e.event === "status") {
        expect(view.lamp).toBe(e.payload["state"]);
      }
    }
    expect(view.lamp).toBe("idle");
  });

  it("watch row updates after executeDone via the watches event", () => {
    const view = new SessionView("s1");
    const stream = executionStream();
    const doneIndex = stream.findIndex((e) => e.event === "executeDone");
    for (const e of stream.slice(0, doneIndex + 1)) view.applyEvent(e);
    expect(view.watches).toEqual([]);       // nothing yet at executeDone
    for (const e of stream.slice(doneIndex + 1)) view.applyEvent(e);
    expect(view.watches).toEqual([
      { id: 1, expr: "x", last_value: "7", last_status: "ok" },
    ]);
    expect(view.records.length).toBe(1);
    expect(view.records[0].execution_count).toBe(1);
  });

  it("two windows fed the same stream render identical output order", () => {
    const a = new SessionView("s1");
    const b = new SessionView("s1");
    const stream = [
      ...executionStream(),
      output(6, "10", "m2"),
      output(7, "11", "m2"),
    ];
    for (const e of stream) a.applyEvent(e);
    for (const e of stream) b.applyEvent(e);
    expect(a.renderedOutputOrder()).toEqual(b.renderedOutputOrder());
    expect(a.outputs.map((o) => a.outputText(o)))
      .toEqual(b.outputs.map((o) => b.outputText(o)));
  });

  it("ignores duplicate or stale seq numbers", () => {
    const view = new SessionView("s1");
    view.applyEvent(output(2, "first"));
    view.applyEvent(output(2, "duplicate"));
    view.applyEvent(output(1, "stale"));
    expect(view.outputs.length).toBe(1);
  });

  it("ignores events for other sessions", () => {
    const view = new SessionView("s1");
    view.applyEvent({ ...output(1, "foreign"), session: "other" });
    expect(view.outputs).toEqual([]);
  });

  it("result filter keeps only execute results, in order", () => {
    const view = new SessionView("s1");
    view.applyEvent(evt("output", 1, {
      request_msg_id: "m1",
      item: { kind: "stream_stdout", text: "log line" },
    }));
    view.applyEvent(output(2, "42"));
    view.applyEvent(evt("output", 3, {
      request_msg_id: "m1",
      item: { kind: "error", ename: "Boom", evalue: "bad" },
    }));
    view.applyEvent(output(4, "43"));
    expect(view.resultOutputs().map((o) => view.outputText(o)))
      .toEqual(["42", "43"]);
    // empty history case: fresh view has an empty result set
    expect(new SessionView("s2").resultOutputs()).toEqual([]);
  });

  it("clearOutputs empties the log but keeps watches and records", () => {
    const view = new SessionView("s1");
    for (const e of executionStream()) view.applyEvent(e);
    view.clearOutputs();
    expect(view.outputs).toEqual([]);
    expect(view.watches.length).toBe(1);
    expect(view.records.length).toBe(1);
  });
});
