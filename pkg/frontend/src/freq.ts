import { Paced } from "./debounce.js";
import { PanelModel } from "./model.js";
import { ProtocolClient } from "./protocol.js";
import { fmt } from "./wire.js";

export type FreqMode = "ratio" | "deviation" | "absolute";

/** Slider display value for a canonical Hz reading.  Ratio is the
 *  multiple of the network fundamental; deviation is signed Hz off the
 *  harmonic partial (k+1)*f0 for node k. */
export function toDisplay(mode: FreqMode, hz: number, fundamental: number, node: number): number {
  if (mode === "ratio") return hz / fundamental;
  if (mode === "deviation") return hz - (node + 1) * fundamental;
  return hz;
}

/** Inverse of toDisplay: the Hz a display value denotes. */
export function fromDisplay(mode: FreqMode, shown: number, fundamental: number, node: number): number {
  if (mode === "ratio") return shown * fundamental;
  if (mode === "deviation") return (node + 1) * fundamental + shown;
  return shown;
}

/** Wire token for a display value.  The suffix names the mode so the
 *  engine applies the same conversion in reverse; deviation always
 *  carries its sign. */
export function toWire(mode: FreqMode, shown: number): string {
  if (mode === "ratio") return `${fmt(shown)}r`;
  if (mode === "deviation") return shown < 0 ? `${fmt(shown)}d` : `+${fmt(shown)}d`;
  return fmt(shown);
}

// Edits land at control block boundaries engine side, so a readback
// fired on the ack would race the flush.  Waiting this long past the
// last ack keeps the confirm honest at any sane block size.
export const READBACK_MS = 80;

/**
 * One network's tuning controls: a slider per node f0 plus the
 * fundamental, with a shared display mode.
 *
 * Drags funnel through one rate limiter per control; the engine sees
 * at most `maxPerSec` SETs per second per slider, the last position
 * always lands, and a settled drag ends with a readback so the panel
 * shows what the engine actually holds, not what was sent.
 */
export class FreqWindow {
  mode: FreqMode = "absolute";
  onDisplay: (control: string, value: number) => void = () => {};
  private limiters = new Map<string, Paced<string>>();
  private confirms = new Map<string, ReturnType<typeof setTimeout>>();
  private readonly intervalMs: number;

  constructor(
    private client: ProtocolClient,
    private model: PanelModel,
    readonly net: string,
    maxPerSec = 30,
  ) {
    this.intervalMs = Math.ceil(1000 / maxPerSec);
  }

  /** Control names in slider order: fundamental first, then nodes. */
  controls(): string[] {
    const out = ["f0"];
    for (let k = 0; k < this.model.modes(this.net); k++) out.push(`node.${k}.f0`);
    return out;
  }

  path(control: string): string {
    return `net.${this.net}.${control}`;
  }

  /** Current display value for a control, from the model's canonical
   *  Hz.  The fundamental reads in Hz whatever the mode. */
  display(control: string): number {
    const hz = this.model.number(this.path(control));
    if (control === "f0") return hz;
    return toDisplay(this.mode, hz, this.model.fundamental(this.net), nodeIndex(control));
  }

  /** Slider drag event: convert per the active mode, emit through the
   *  per-control limiter.  No drag, no traffic. */
  drag(control: string, shown: number): void {
    const token = control === "f0" ? fmt(shown) : toWire(this.mode, shown);
    let limiter = this.limiters.get(control);
    if (!limiter) {
      limiter = new Paced<string>(this.intervalMs, (tok) => {
        void this.emit(control, tok);
      });
      this.limiters.set(control, limiter);
    }
    limiter.push(token);
  }

  /** Switching modes converts the display only; nothing is emitted. */
  setMode(mode: FreqMode): void {
    this.mode = mode;
    for (const control of this.controls()) this.onDisplay(control, this.display(control));
  }

  /** Called by the session when a model entry under this network
   *  changes; refreshes the matching slider. */
  noteChange(path: string): void {
    const prefix = `net.${this.net}.`;
    if (!path.startsWith(prefix) || !path.endsWith(".f0")) return;
    const control = path.slice(prefix.length);
    this.onDisplay(control, this.display(control));
    // a fundamental move re-bases ratio and deviation displays
    if (control === "f0" && this.mode !== "absolute") {
      for (const c of this.controls()) {
        if (c !== "f0") this.onDisplay(c, this.display(c));
      }
    }
  }

  private async emit(control: string, token: string): Promise<void> {
    const reply = await this.client.request(`SET ${this.path(control)} ${token}`);
    if (!reply.startsWith("OK")) return;
    const prior = this.confirms.get(control);
    if (prior !== undefined) clearTimeout(prior);
    this.confirms.set(
      control,
      setTimeout(() => {
        this.confirms.delete(control);
        void this.settle(control);
      }, READBACK_MS),
    );
  }

  private async settle(control: string): Promise<void> {
    if (control === "f0") {
      // the fundamental is a macro: it rides every node, so refresh
      // the whole network prefix rather than one path
      const rows = await this.client.list(`net.${this.net}.`);
      for (const r of rows) this.model.store(r.path, r.value);
    } else {
      await this.model.readback(this.client, this.path(control));
    }
  }
}

function nodeIndex(control: string): number {
  return parseInt(control.split(".")[1], 10);
}
