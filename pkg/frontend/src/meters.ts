import { ProtocolClient } from "./protocol.js";
import { words } from "./wire.js";

// Bars are log scaled: strike energies span many decades, so a linear
// bar would pin at both ends.  The floor sits under audibility, the
// ceiling over any sane strike.
export const METER_FLOOR = 1e-9;
export const METER_CEIL = 1e3;

/** Bar height in [0,1] for an energy reading. */
export function barHeight(energy: number): number {
  if (!(energy > METER_FLOOR)) return 0;
  const span = Math.log10(METER_CEIL) - Math.log10(METER_FLOOR);
  return Math.min(1, (Math.log10(energy) - Math.log10(METER_FLOOR)) / span);
}

/**
 * Per-node energy bars fed by the meter stream.
 *
 * A push block is a header line `MTR <n> <dropped>` followed by n
 * value lines; the block commits atomically once complete, so a
 * half-arrived frame never paints.  Value lines are told apart from
 * headers by their second word: a path, never a bare count.
 */
export class MeterStrip {
  readonly bars = new Map<string, number>();
  readonly energies = new Map<string, number>();
  subscribed = false;
  frames = 0;
  dropped = 0;
  onFrame: () => void = () => {};
  private expect = 0;
  private block: Array<[string, number]> = [];

  constructor(private client: ProtocolClient) {}

  async subscribe(hz = 30): Promise<string> {
    const reply = await this.client.request(`SUB meters ${hz}`);
    if (reply.startsWith("OK")) this.subscribed = true;
    return reply;
  }

  async unsubscribe(): Promise<string> {
    const reply = await this.client.request("UNSUB meters");
    if (reply.startsWith("OK")) {
      this.subscribed = false;
      this.expect = 0;
      this.block = [];
    }
    return reply;
  }

  /** Feed one MTR push line. */
  handlePush(line: string): void {
    const w = words(line);
    if (w[0] !== "MTR") return;
    if (/^\d+$/.test(w[1])) {
      this.expect = parseInt(w[1], 10);
      this.dropped += parseInt(w[2], 10);
      this.block = [];
      if (this.expect === 0) this.commit();
      return;
    }
    if (this.expect === 0) return;
    this.block.push([w[1], parseFloat(w[2])]);
    if (this.block.length === this.expect) this.commit();
  }

  private commit(): void {
    this.expect = 0;
    const frame = this.block;
    this.block = [];
    if (!this.subscribed) return;
    for (const [path, energy] of frame) {
      this.energies.set(path, energy);
      this.bars.set(path, barHeight(energy));
    }
    this.frames += 1;
    this.onFrame();
  }
}
