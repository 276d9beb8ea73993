import { Transport } from "./protocol.js";

/** Browser transport: a WebSocket to the line bridge.  Each text
 *  message carries one or more newline-separated protocol lines. */
export class WsTransport implements Transport {
  private ws: WebSocket | null = null;
  private lineFns: Array<(line: string) => void> = [];
  private openFns: Array<() => void> = [];
  private closeFns: Array<() => void> = [];

  constructor(private url: string) {}

  connect(): void {
    if (this.ws && this.ws.readyState <= WebSocket.OPEN) return;
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      for (const f of this.openFns) f();
    };
    ws.onmessage = (ev) => {
      for (const raw of String(ev.data).split("\n")) {
        const line = raw.trim();
        if (line) for (const f of this.lineFns) f(line);
      }
    };
    ws.onclose = () => {
      if (this.ws === ws) this.ws = null;
      for (const f of this.closeFns) f();
    };
    ws.onerror = () => ws.close();
  }

  close(): void {
    this.ws?.close();
    this.ws = null;
  }

  send(line: string): void {
    if (this.ws && this.ws.readyState === WebSocket.OPEN) this.ws.send(line + "\n");
  }

  onLine(fn: (line: string) => void): void {
    this.lineFns.push(fn);
  }

  onOpen(fn: () => void): void {
    this.openFns.push(fn);
  }

  onClose(fn: () => void): void {
    this.closeFns.push(fn);
  }
}
