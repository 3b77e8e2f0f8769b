// Wire types for the rbox service schema (top-level "v": 1 throughout).

export interface RpcRequest {
  v: 1;
  id: number;
  method: string;
  params: Record<string, unknown>;
}

export interface RpcErrorBody {
  code: number;
  message: string;
}

export interface RpcResponse {
  v: 1;
  id: number;
  result?: Record<string, unknown>;
  error?: RpcErrorBody;
}

export interface RpcEvent {
  v: 1;
  event: string;
  session: string;
  payload: Record<string, unknown> & { seq: number };
}

export type LampState = "starting" | "busy" | "idle" | "dead";

export interface OutputItem {
  kind: "stream_stdout" | "stream_stderr" | "result" | "display" | "error";
  data?: Record<string, string>;
  text?: string;
  ename?: string;
  evalue?: string;
  traceback?: string[];
}

export interface RecordSummary {
  request_msg_id: string | null;
  code: string;
  execution_count: number | null;
  status: "queued" | "running" | "ok" | "error" | "aborted";
  outputs: OutputItem[];
  started: number | null;
  ended: number | null;
}

export interface WatchRow {
  id: number;
  expr: string;
  last_value: string | null;
  last_status: "ok" | "error" | "stale";
}

export interface StatementSpan {
  start_line: number;
  end_line: number;
  start_byte: number;
  end_byte: number;
  complete: boolean;
}

export interface KernelInfo {
  name: string;
  display_name: string;
  language: string;
}

export const RPC_ERROR = {
  unknownMethod: 1,
  badParams: 2,
  unknownSession: 3,
  kernelDead: 4,
  incompleteExpression: 5,
} as const;
