// Run-selection logic: raw selections go out as-is; with no selection the
// enclosing statement of the cursor runs and the cursor advances to the
// next statement. Spans from the chunk RPC are UTF-8 byte offsets, so the
// cursor's UTF-16 index is translated both ways.

import { RpcClient } from "./client.js";
import { RecordSummary, StatementSpan } from "./protocol.js";

export interface EditorState {
  text: string;
  cursor: number; // UTF-16 index
  selectionStart: number;
  selectionEnd: number;
}

export interface RunOutcome {
  sent: string | null;
  cursor: number; // possibly advanced
  record: RecordSummary | null;
}

const encoder = new TextEncoder();

export function utf16ToByte(text: string, index: number): number {
  return encoder.encode(text.slice(0, index)).length;
}

export function byteToUtf16(text: string, byteOffset: number): number {
  let bytes = 0;
  for (let i = 0; i < text.length; i++) {
    if (bytes >= byteOffset) return i;
    const cp = text.codePointAt(i)!;
    bytes += cp < 0x80 ? 1 : cp < 0x800 ? 2 : cp < 0x10000 ? 3 : 4;
    if (cp >= 0x10000) i++; // surrogate pair occupies two UTF-16 units
  }
  return text.length;
}

export function byteSlice(text: string, start: number, end: number): string {
  return text.slice(byteToUtf16(text, start), byteToUtf16(text, end));
}

function enclosingSpan(spans: StatementSpan[], cursorByte: number): StatementSpan | null {
  for (const span of spans) {
    if (cursorByte < span.end_byte) return span;
  }
  return spans.length ? spans[spans.length - 1] : null;
}

export async function runSelection(
  client: RpcClient,
  session: string,
  state: EditorState,
): Promise<RunOutcome> {
  if (state.selectionEnd > state.selectionStart) {
    const raw = state.text.slice(state.selectionStart, state.selectionEnd);
    const result = await client.call("execute", { session, code: raw, silent: false });
    return {
      sent: raw,
      cursor: state.cursor,
      record: (result["record"] as unknown as RecordSummary) ?? null,
    };
  }
  const chunked = await client.call("chunk", {
    source: state.text,
    mode: "statements",
  });
  const spans = (chunked["statements"] as unknown as StatementSpan[]) ?? [];
  const span = enclosingSpan(spans, utf16ToByte(state.text, state.cursor));
  if (span === null) {
    return { sent: null, cursor: state.cursor, record: null };
  }
  const code = byteSlice(state.text, span.start_byte, span.end_byte);
  const result = await client.call("execute", { session, code, silent: false });
  const next = spans.find((s) => s.start_byte >= span.end_byte);
  const cursor = next
    ? byteToUtf16(state.text, next.start_byte)
    : byteToUtf16(state.text, span.end_byte);
  return {
    sent: code,
    cursor,
    record: (result["record"] as unknown as RecordSummary) ?? null,
  };
}
