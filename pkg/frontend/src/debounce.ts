/**
 * Rate limiter for a continuous control.
 *
 * Leading edge sends immediately, then at most one send per interval,
 * and the last pushed value always lands (trailing edge).  A drag
 * stream therefore never exceeds the cap and never loses the final
 * position.
 */
export class Paced<T> {
  private last = -Infinity;
  private held: { v: T } | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(private intervalMs: number, private send: (v: T) => void) {}

  push(v: T): void {
    const now = Date.now();
    if (this.timer === null && now - this.last >= this.intervalMs) {
      this.last = now;
      this.send(v);
      return;
    }
    this.held = { v };
    if (this.timer === null) {
      const wait = Math.max(0, this.intervalMs - (now - this.last));
      this.timer = setTimeout(() => this.fire(), wait);
    }
  }

  /** Drop anything held without sending it. */
  cancel(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
    this.held = null;
  }

  private fire(): void {
    this.timer = null;
    if (!this.held) return;
    const { v } = this.held;
    this.held = null;
    this.last = Date.now();
    this.send(v);
  }
}
