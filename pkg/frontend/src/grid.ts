import { ProtocolClient } from "./protocol.js";
import { fmt, words } from "./wire.js";

export type EtfKindName = "linear" | "phase" | "detune" | "saturate" | "oneway" | "limit";

/** Template menu: per-instance fields each kind accepts, in the wire's
 *  shorthand keys (s is saturation scale, e the energy ceiling). */
export const KIND_FIELDS: Record<EtfKindName, string[]> = {
  linear: ["k"],
  phase: ["k"],
  detune: ["k", "kappa"],
  saturate: ["k", "s"],
  oneway: ["k"],
  limit: ["e"],
};

export const KIND_NAMES = Object.keys(KIND_FIELDS) as EtfKindName[];

export interface Cell {
  id: number;
  kind: string;
}

/**
 * Node-by-node coupling matrix for one network.
 *
 * A cell click (or a group of them with grouping on) picks the
 * participants; confirming a template emits one COUPLE ADD.  The wire
 * enumerates coupling parameters but not participants, so placement is
 * panel bookkeeping keyed by coupling id; LIST stays the authority on
 * which ids are alive and prune() drops placements whose id vanished.
 */
export class CouplingGrid {
  readonly cells = new Map<string, Cell>();
  readonly errors = new Map<string, string>();
  grouping = false;
  onCells: () => void = () => {};
  private selection = new Set<string>();

  constructor(
    private client: ProtocolClient,
    readonly net: string,
    readonly size: number,
    private refresh: () => Promise<void> = async () => {},
  ) {}

  static key(row: number, col: number): string {
    return `${row},${col}`;
  }

  click(row: number, col: number): void {
    const key = CouplingGrid.key(row, col);
    if (!this.grouping) this.selection.clear();
    if (this.selection.has(key)) this.selection.delete(key);
    else this.selection.add(key);
  }

  selected(): string[] {
    return [...this.selection];
  }

  clearSelection(): void {
    this.selection.clear();
  }

  /** Distinct node indices touched by the selection, first-touch
   *  order.  A group of cells maps to one n-ary coupling over these. */
  participants(): number[] {
    const out: number[] = [];
    for (const key of this.selection) {
      for (const part of key.split(",")) {
        const idx = parseInt(part, 10);
        if (!out.includes(idx)) out.push(idx);
      }
    }
    return out;
  }

  /** Confirm the template menu: one COUPLE ADD for the whole
   *  selection.  OK places the new id on every selected cell; ERR
   *  lands inline on them instead. */
  async add(
    kind: EtfKindName,
    params: Record<string, number> = {},
    rateDivisor = 1,
  ): Promise<string> {
    const sel = this.selected();
    const refs =
      kind === "limit" ? [this.net] : this.participants().map((i) => `${this.net}.${i}`);
    const fields = KIND_FIELDS[kind]
      .filter((f) => params[f] !== undefined)
      .map((f) => ` ${f}=${fmt(params[f])}`)
      .join("");
    const rate = rateDivisor !== 1 ? ` rate=${rateDivisor}` : "";
    const reply = await this.client.request(`COUPLE ADD ${kind} ${refs.join(" ")}${fields}${rate}`);
    const w = words(reply);
    if (w[0] === "OK") {
      const id = parseInt(w[1], 10);
      for (const key of sel) {
        this.cells.set(key, { id, kind });
        this.errors.delete(key);
      }
      // pull the new instance's parameter rows into the model
      await this.refresh();
    } else {
      for (const key of sel) this.errors.set(key, reply);
    }
    this.selection.clear();
    this.onCells();
    return reply;
  }

  /** Delete the coupling occupying a cell.  Clears every cell that
   *  shares the id; an ERR reply surfaces on the clicked cell. */
  async remove(row: number, col: number): Promise<string> {
    const key = CouplingGrid.key(row, col);
    const cell = this.cells.get(key);
    if (!cell) return "";
    const reply = await this.client.request(`COUPLE DEL ${cell.id}`);
    if (reply.startsWith("OK")) {
      for (const [k, c] of [...this.cells]) {
        if (c.id === cell.id) this.cells.delete(k);
      }
      this.errors.delete(key);
      await this.refresh();
    } else {
      this.errors.set(key, reply);
    }
    this.onCells();
    return reply;
  }

  /** What a cell displays: kind plus id when occupied, else empty. */
  label(row: number, col: number): string {
    const cell = this.cells.get(CouplingGrid.key(row, col));
    return cell ? `${cell.kind}#${cell.id}` : "";
  }

  error(row: number, col: number): string {
    return this.errors.get(CouplingGrid.key(row, col)) ?? "";
  }

  /** Drop placements whose coupling no longer exists engine side. */
  prune(liveIds: Set<number>): void {
    let changed = false;
    for (const [key, cell] of [...this.cells]) {
      if (!liveIds.has(cell.id)) {
        this.cells.delete(key);
        changed = true;
      }
    }
    if (changed) this.onCells();
  }
}
