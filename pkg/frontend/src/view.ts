// Session view state: one ordered event stream in, rendered state out.
// Pure data so the same reducer drives the main pane, result windows, and
// the tests; DOM code subscribes to onChange and re-renders.

import {
  LampState,
  OutputItem,
  RecordSummary,
  RpcEvent,
  WatchRow,
} from "./protocol.js";

export interface RenderedOutput {
  seq: number;
  requestMsgId: string | null;
  item: OutputItem;
}

export class SessionView {
  readonly sessionId: string;
  kernelDisplayName: string;
  lamp: LampState = "starting";
  outputs: RenderedOutput[] = [];
  watches: WatchRow[] = [];
  records: RecordSummary[] = [];
  lastSeq = 0;
  private changeHandlers: Array<() => void> = [];

  constructor(sessionId: string, kernelDisplayName = "") {
    this.sessionId = sessionId;
    this.kernelDisplayName = kernelDisplayName;
  }

  onChange(handler: () => void): () => void {
    this.changeHandlers.push(handler);
    return () => {
      const i = this.changeHandlers.indexOf(handler);
      if (i >= 0) this.changeHandlers.splice(i, 1);
    };
  }

  private notify(): void {
    for (const h of this.changeHandlers) h();
  }

  applyEvent(evt: RpcEvent): void {
    if (evt.session !== this.sessionId) return;
    const seq = evt.payload.seq;
    if (seq <= this.lastSeq) return; // duplicate or stale
    this.lastSeq = seq;
    switch (evt.event) {
      case "status":
        this.lamp = evt.payload["state"] as LampState;
        break;
      case "output":
        this.outputs.push({
          seq,
          requestMsgId: (evt.payload["request_msg_id"] as string | null) ?? null,
          item: evt.payload["item"] as unknown as OutputItem,
        });
        break;
      case "executeDone":
        this.records.push(evt.payload["record"] as unknown as RecordSummary);
        break;
      case "watches":
        this.watches = evt.payload["watches"] as unknown as WatchRow[];
        break;
      default:
        return;
    }
    this.notify();
  }

  /** Outputs in arrival order; always equals ascending seq order. */
  renderedOutputOrder(): number[] {
    return this.outputs.map((o) => o.seq);
  }

  /** For the result window: execute results only, same stream, same order. */
  resultOutputs(): RenderedOutput[] {
    return this.outputs.filter((o) => o.item.kind === "result");
  }

  clearOutputs(): void {
    this.outputs = [];
    this.notify();
  }

  outputText(entry: RenderedOutput): string {
    const item = entry.item;
    switch (item.kind) {
      case "stream_stdout":
      case "stream_stderr":
        return item.text ?? "";
      case "result":
      case "display":
        return item.data?.["text/plain"] ?? "";
      case "error":
        return `${item.ename ?? "Error"}: ${item.evalue ?? ""}`;
    }
  }
}
