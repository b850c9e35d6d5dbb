// Transport and client. The transport is pluggable so tests can script the
// bridge; the browser build uses a WebSocket with automatic reconnect.

import type { CommandResponse, CommandType, Envelope } from "./protocol.js";
import { commandEnvelope, parseEnvelope } from "./protocol.js";

export interface Transport {
  send(text: string): void;
  close(): void;
  onmessage: ((text: string) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
}

export type TransportFactory = (url: string) => Transport;

export const webSocketTransport: TransportFactory = (url) => {
  const ws = new WebSocket(url);
  const transport: Transport = {
    send: (text) => ws.send(text),
    close: () => ws.close(),
    onmessage: null,
    onopen: null,
    onclose: null,
  };
  ws.onmessage = (event) => transport.onmessage?.(String(event.data));
  ws.onopen = () => transport.onopen?.();
  ws.onclose = () => transport.onclose?.();
  ws.onerror = () => ws.close();
  return transport;
};

export interface BridgeClientOptions {
  reconnectMs?: number;
  commandTimeoutMs?: number;
}

export class BridgeClient {
  onEvent: ((envelope: Envelope) => void) | null = null;
  onConnection: ((status: "connecting" | "open" | "closed") => void) | null = null;

  private readonly url: string;
  private readonly factory: TransportFactory;
  private readonly reconnectMs: number;
  private readonly commandTimeoutMs: number;
  private transport: Transport | null = null;
  private seq = 0;
  private pending = new Map<
    number,
    { resolve: (r: CommandResponse) => void; timer: ReturnType<typeof setTimeout> }
  >();
  private closedByUser = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(url: string, factory: TransportFactory = webSocketTransport, options: BridgeClientOptions = {}) {
    this.url = url;
    this.factory = factory;
    this.reconnectMs = options.reconnectMs ?? 1000;
    this.commandTimeoutMs = options.commandTimeoutMs ?? 10000;
  }

  connect(): void {
    this.closedByUser = false;
    this.onConnection?.("connecting");
    const transport = this.factory(this.url);
    this.transport = transport;
    transport.onopen = () => this.onConnection?.("open");
    transport.onmessage = (text) => this.handleMessage(text);
    transport.onclose = () => {
      this.failPending("connection closed");
      this.onConnection?.("closed");
      this.transport = null;
      if (!this.closedByUser && this.reconnectTimer === null) {
        this.reconnectTimer = setTimeout(() => {
          this.reconnectTimer = null;
          this.connect();
        }, this.reconnectMs);
      }
    };
  }

  close(): void {
    this.closedByUser = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    this.transport?.close();
  }

  get connected(): boolean {
    return this.transport !== null;
  }

  command(type: CommandType, payload: Record<string, unknown> = {}): Promise<CommandResponse> {
    const transport = this.transport;
    if (!transport) {
      return Promise.reject(new Error("not connected"));
    }
    const seq = ++this.seq;
    const text = JSON.stringify(commandEnvelope(type, seq, payload));
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        this.pending.delete(seq);
        reject(new Error(`${type} timed out`));
      }, this.commandTimeoutMs);
      this.pending.set(seq, { resolve, timer });
      transport.send(text);
    });
  }

  // the seq a command() call will use next; lets a caller pair a response
  // envelope seen in onEvent with the command it answers
  peekNextSeq(): number {
    return this.seq + 1;
  }

  private handleMessage(text: string): void {
    let envelope: Envelope;
    try {
      envelope = parseEnvelope(text);
    } catch {
      return; // a malformed server frame is dropped, never crashes the UI
    }
    if (envelope.type === "response") {
      const replyTo = envelope.payload["in_reply_to"];
      if (typeof replyTo === "number") {
        const entry = this.pending.get(replyTo);
        if (entry) {
          this.pending.delete(replyTo);
          clearTimeout(entry.timer);
          entry.resolve(envelope.payload as unknown as CommandResponse);
        }
      }
    }
    this.onEvent?.(envelope);
  }

  private failPending(reason: string): void {
    for (const [seq, entry] of this.pending) {
      clearTimeout(entry.timer);
      entry.resolve({
        in_reply_to: seq,
        ok: false,
        state: "Idle",
        error: reason,
        result: null,
      });
    }
    this.pending.clear();
  }
}
