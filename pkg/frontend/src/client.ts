// WebSocket RPC client: token handshake first, then id-correlated requests
// and an ordered event stream. No request frame leaves before the server
// acknowledges the token.

import { RpcEvent, RpcErrorBody } from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
}

export class RpcCallError extends Error {
  code: number;
  constructor(body: RpcErrorBody) {
    super(body.message);
    this.code = body.code;
  }
}

type Pending = {
  resolve: (result: Record<string, unknown>) => void;
  reject: (err: Error) => void;
};

export class RpcClient {
  private socket: SocketLike;
  private token: string;
  private nextId = 1;
  private pending = new Map<number, Pending>();
  private eventHandlers: Array<(evt: RpcEvent) => void> = [];
  private ready = false;
  private queued: string[] = [];
  private readyResolvers: Array<() => void> = [];
  private failure: Error | null = null;

  constructor(socket: SocketLike, token: string) {
    this.socket = socket;
    this.token = token;
    socket.onopen = () => {
      // the token frame is the only thing allowed before the ack
      socket.send(JSON.stringify({ token: this.token }));
    };
    socket.onmessage = (ev) => this.handleFrame(String(ev.data));
    socket.onclose = () => {
      this.failure = this.failure ?? new Error("connection closed");
      for (const [, p] of this.pending) p.reject(this.failure);
      this.pending.clear();
      for (const r of this.readyResolvers) r();
      this.readyResolvers = [];
    };
  }

  private handleFrame(raw: string): void {
    let frame: Record<string, unknown>;
    try {
      frame = JSON.parse(raw);
    } catch {
      return;
    }
    if (!this.ready) {
      if (frame["ok"] === true) {
        this.ready = true;
        for (const data of this.queued) this.socket.send(data);
        this.queued = [];
        for (const r of this.readyResolvers) r();
        this.readyResolvers = [];
      }
      return;
    }
    if (typeof frame["event"] === "string") {
      for (const handler of this.eventHandlers) handler(frame as unknown as RpcEvent);
      return;
    }
    const id = frame["id"];
    if (typeof id !== "number") return;
    const p = this.pending.get(id);
    if (!p) return;
    this.pending.delete(id);
    if (frame["error"]) {
      p.reject(new RpcCallError(frame["error"] as RpcErrorBody));
    } else {
      p.resolve((frame["result"] ?? {}) as Record<string, unknown>);
    }
  }

  /** Resolves once the token handshake is acknowledged. */
  handshake(): Promise<void> {
    if (this.ready) return Promise.resolve();
    if (this.failure) return Promise.reject(this.failure);
    return new Promise((resolve, reject) => {
      this.readyResolvers.push(() => {
        if (this.ready) resolve();
        else reject(this.failure ?? new Error("handshake failed"));
      });
    });
  }

  call(method: string, params: Record<string, unknown> = {}): Promise<Record<string, unknown>> {
    if (this.failure) return Promise.reject(this.failure);
    const id = this.nextId++;
    const data = JSON.stringify({ v: 1, id, method, params });
    return new Promise((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      if (this.ready) {
        this.socket.send(data);
      } else {
        this.queued.push(data); // held back until the handshake completes
      }
    });
  }

  onEvent(handler: (evt: RpcEvent) => void): () => void {
    this.eventHandlers.push(handler);
    return () => {
      const i = this.eventHandlers.indexOf(handler);
      if (i >= 0) this.eventHandlers.splice(i, 1);
    };
  }

  close(): void {
    this.socket.close();
  }
}
