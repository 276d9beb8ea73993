import { PanelModel } from "./model.js";
import { ProtocolClient } from "./protocol.js";
import { words } from "./wire.js";

/**
 * Save and recall named snapshots.
 *
 * The wire reports recall results as counts: how many stored settings
 * applied and how many went stale.  Names this panel saved itself are
 * remembered with the paths they covered, so a stale recall can name
 * what was skipped; recalling a name saved elsewhere (the instrument
 * file, another client) falls back to the bare count.
 */
export class SnapshotBar {
  readonly names: string[] = [];
  onToast: (text: string) => void = () => {};
  private saved = new Map<string, string[]>();

  constructor(
    private client: ProtocolClient,
    private model: PanelModel,
    private refresh: () => Promise<void>,
  ) {}

  async save(name: string, scope = "instrument", target?: string): Promise<string> {
    let req = `SNAP SAVE ${name}`;
    if (scope !== "instrument" || target) req += ` ${scope}`;
    if (target) req += ` ${target}`;
    const reply = await this.client.request(req);
    if (reply.startsWith("OK")) {
      if (!this.names.includes(name)) this.names.push(name);
      const prefix = scope === "network" && target ? `net.${target}.` : "";
      this.saved.set(name, this.model.paths(prefix));
    } else {
      this.onToast(reply);
    }
    return reply;
  }

  async load(name: string): Promise<string> {
    const reply = await this.client.request(`SNAP LOAD ${name}`);
    const w = words(reply);
    if (w[0] !== "OK") {
      this.onToast(reply);
      return reply;
    }
    // refresh first: stale paths are the ones missing from the tree
    // the recall just landed on
    await this.refresh();
    const stale = parseInt(w[2], 10);
    if (stale > 0) {
      const known = this.saved.get(name) ?? [];
      const gone = known.filter((p) => this.model.get(p) === undefined);
      const detail = gone.length ? `: ${gone.join(", ")}` : "";
      this.onToast(`snapshot ${name}: ${stale} stored setting(s) no longer apply${detail}`);
    }
    return reply;
  }
}
