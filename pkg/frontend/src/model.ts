import { ProtocolClient } from "./protocol.js";
import { words } from "./wire.js";

/**
 * Mirror of the engine's parameter tree.
 *
 * Every entry traces to a VAL line the engine sent: rows from a LIST
 * rebuild, or a GET readback after an acknowledged SET.  Nothing is
 * cached on faith; in particular the value sent with a SET is never
 * stored, because suffixed frequencies canonicalize engine side.
 */
export class PanelModel {
  onChange: (path: string, value: string) => void = () => {};
  private values = new Map<string, string>();

  /** Replace the whole tree from a LIST dump.  Fires onChange only
   *  for entries that actually changed, so a rebuild that lands on
   *  identical state moves nothing downstream. */
  rebuild(client: ProtocolClient): Promise<void> {
    return this.rebuildPrefix(client, "");
  }

  /** Same, scoped to one subtree: entries under the prefix sync to
   *  the listing, entries outside it are untouched. */
  async rebuildPrefix(client: ProtocolClient, prefix: string): Promise<void> {
    const rows = await client.list(prefix);
    const fresh = new Map(rows.map((r) => [r.path, r.value]));
    for (const path of [...this.values.keys()]) {
      if (path.startsWith(prefix) && !fresh.has(path)) {
        this.values.delete(path);
        this.onChange(path, "");
      }
    }
    for (const [path, value] of fresh) {
      this.store(path, value);
    }
  }

  /** SET followed by a GET readback.  Returns the SET reply line;
   *  the cache updates only from the readback's VAL. */
  async set(client: ProtocolClient, path: string, raw: string): Promise<string> {
    const reply = await client.request(`SET ${path} ${raw}`);
    if (!reply.startsWith("OK")) return reply;
    await this.readback(client, path);
    return reply;
  }

  /** Refresh one path from the engine. */
  async readback(client: ProtocolClient, path: string): Promise<void> {
    const line = await client.request(`GET ${path}`);
    const w = words(line);
    if (w[0] === "VAL") this.store(w[1], w[2]);
  }

  store(path: string, value: string): void {
    if (this.values.get(path) === value) return;
    this.values.set(path, value);
    this.onChange(path, value);
  }

  get(path: string): string | undefined {
    return this.values.get(path);
  }

  /** Numeric view of one entry; NaN when absent or non-numeric. */
  number(path: string): number {
    const v = this.values.get(path);
    return v === undefined ? NaN : parseFloat(v);
  }

  paths(prefix = ""): string[] {
    return [...this.values.keys()].filter((p) => p.startsWith(prefix)).sort();
  }

  dump(): Map<string, string> {
    return new Map(this.values);
  }

  /** Paths whose value differs between this model and a dump taken
   *  earlier, in either direction.  Empty means identical state. */
  diff(other: Map<string, string>): string[] {
    const out = new Set<string>();
    for (const [p, v] of this.values) if (other.get(p) !== v) out.add(p);
    for (const [p, v] of other) if (this.values.get(p) !== v) out.add(p);
    return [...out].sort();
  }

  // schema helpers, all read off the tree itself

  networks(): string[] {
    const names = new Set<string>();
    for (const p of this.values.keys()) {
      const w = p.split(".");
      if (w[0] === "net" && w[2] === "modes") names.add(w[1]);
    }
    return [...names].sort();
  }

  modes(net: string): number {
    return this.number(`net.${net}.modes`) || 0;
  }

  fundamental(net: string): number {
    return this.number(`net.${net}.f0`);
  }

  couplingIds(): Set<number> {
    const ids = new Set<number>();
    for (const p of this.values.keys()) {
      if (p.startsWith("coupling.")) ids.add(parseInt(p.split(".")[1], 10));
    }
    return ids;
  }
}
