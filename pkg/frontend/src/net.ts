/** Reconnecting WebSocket wrapper: one socket, JSON envelopes, backoff. */

import type { Envelope } from "./protocol.js";

export interface SocketHandlers {
  onOpen: () => void;
  onClose: () => void;
  onMessage: (raw: unknown) => void;
}

const RECONNECT_BASE_MS = 1_000;
const RECONNECT_MAX_MS = 15_000;

export class Channel {
  private socket: WebSocket | null = null;
  private attempts = 0;
  private closedByUser = false;

  constructor(
    private readonly url: string,
    private readonly handlers: SocketHandlers,
  ) {}

  connect(): void {
    this.closedByUser = false;
    const socket = new WebSocket(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.attempts = 0;
      this.handlers.onOpen();
    };
    socket.onmessage = (event: MessageEvent<string>) => {
      try {
        this.handlers.onMessage(JSON.parse(event.data));
      } catch {
        // non-JSON frames are ignored; the channel survives
      }
    };
    socket.onclose = () => {
      this.handlers.onClose();
      if (!this.closedByUser) this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    this.attempts += 1;
    const delay = Math.min(RECONNECT_BASE_MS * 2 ** (this.attempts - 1), RECONNECT_MAX_MS);
    setTimeout(() => this.connect(), delay);
  }

  send(envelope: Envelope): boolean {
    if (this.socket === null || this.socket.readyState !== WebSocket.OPEN) {
      return false;
    }
    this.socket.send(JSON.stringify(envelope));
    return true;
  }

  close(): void {
    this.closedByUser = true;
    this.socket?.close();
  }
}

export function defaultChannelUrl(): string {
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  return `${scheme}://${location.host}/ws/qrf`;
}
