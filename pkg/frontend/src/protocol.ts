import { words } from "./wire.js";

/** Anything that moves protocol lines: a WebSocket bridge in the
 *  browser, a raw TCP socket under node, an in-memory double in tests.
 *  Multiple listeners per event; the client and the session each hang
 *  their own. */
export interface Transport {
  connect(): void;
  close(): void;
  send(line: string): void;
  onLine(fn: (line: string) => void): void;
  onOpen(fn: () => void): void;
  onClose(fn: () => void): void;
}

export interface ListRow {
  path: string;
  value: string;
}

interface Pending {
  kind: "single" | "list";
  rows: ListRow[];
  settle(terminal: string, rows: ListRow[]): void;
  reject(err: Error): void;
}

/**
 * Line protocol client.
 *
 * Every request gets exactly one terminal reply, in request order.
 * LIST is the one verb that streams first: its VAL rows are collected
 * against the oldest pending request until the closing OK or ERR.
 * MTR lines are pushes and can interleave anywhere, including inside
 * a LIST block; they route to onPush and never consume a pending slot.
 */
export class ProtocolClient {
  onPush: (line: string) => void = () => {};
  private pending: Pending[] = [];

  constructor(private transport: Transport) {
    transport.onLine((line) => this.route(line));
    transport.onClose(() => this.dropPending());
  }

  /** Send one request line; resolves with the raw terminal reply.
   *  ERR replies resolve too, callers inspect the line. */
  request(line: string): Promise<string> {
    return new Promise((resolve, reject) => {
      this.pending.push({
        kind: "single",
        rows: [],
        settle: (terminal) => resolve(terminal),
        reject,
      });
      this.transport.send(line);
    });
  }

  /** LIST with an optional path prefix; resolves with the rows. */
  list(prefix = ""): Promise<ListRow[]> {
    return new Promise((resolve, reject) => {
      this.pending.push({
        kind: "list",
        rows: [],
        settle: (terminal, rows) => {
          if (terminal.startsWith("ERR")) reject(new Error(terminal));
          else resolve(rows);
        },
        reject,
      });
      this.transport.send(prefix ? `LIST ${prefix}` : "LIST");
    });
  }

  private route(line: string): void {
    if (line.startsWith("MTR ")) {
      this.onPush(line);
      return;
    }
    const head = this.pending[0];
    if (!head) {
      // a line with no request outstanding; surface rather than drop
      this.onPush(line);
      return;
    }
    if (head.kind === "list" && line.startsWith("VAL ")) {
      const w = words(line);
      head.rows.push({ path: w[1], value: w[2] });
      return;
    }
    this.pending.shift();
    head.settle(line, head.rows);
  }

  private dropPending(): void {
    const dropped = this.pending.splice(0);
    for (const p of dropped) p.reject(new Error("connection closed"));
  }
}
