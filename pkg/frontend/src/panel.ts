import { FreqWindow } from "./freq.js";
import { CouplingGrid } from "./grid.js";
import { MeterStrip } from "./meters.js";
import { PanelModel } from "./model.js";
import { ProtocolClient, Transport } from "./protocol.js";
import { SnapshotBar } from "./snapshots.js";

// Edits queue engine side and land at the next control block, so a
// LIST fired on the heels of a SNAP LOAD could read the old values.
export const RELOAD_MS = 100;

export const RETRY_MS = 1000;

export type PanelStatus = "connecting" | "live" | "down";

/**
 * The session: one socket, one model, the widgets hanging off it.
 *
 * Connection loss flips status to "down" (the DOM layer grays out on
 * that) and arms a retry timer.  Every successful open, first or not,
 * replays LIST and rebuilds the model wholesale; values that came back
 * identical fire no change events, so a clean reconnect moves nothing
 * on screen.
 */
export class PanelSession {
  readonly client: ProtocolClient;
  readonly model = new PanelModel();
  readonly meters: MeterStrip;
  readonly snapshots: SnapshotBar;
  readonly windows = new Map<string, FreqWindow>();
  readonly grids = new Map<string, CouplingGrid>();
  status: PanelStatus = "connecting";
  onStatus: (s: PanelStatus) => void = () => {};
  onValue: (path: string, value: string) => void = () => {};
  private meterHz = 0;
  private retry: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;

  constructor(private transport: Transport) {
    this.client = new ProtocolClient(transport);
    this.meters = new MeterStrip(this.client);
    this.snapshots = new SnapshotBar(this.client, this.model, () => this.refresh());
    this.client.onPush = (line) => this.meters.handlePush(line);
    this.model.onChange = (path, value) => {
      for (const w of this.windows.values()) w.noteChange(path);
      this.onValue(path, value);
    };
    transport.onOpen(() => {
      void this.resync();
    });
    transport.onClose(() => {
      this.status = "down";
      this.onStatus("down");
      this.scheduleRetry();
    });
  }

  start(): void {
    this.transport.connect();
  }

  stop(): void {
    this.stopped = true;
    if (this.retry !== null) clearTimeout(this.retry);
    this.retry = null;
    this.transport.close();
  }

  async subscribeMeters(hz = 30): Promise<void> {
    this.meterHz = hz;
    await this.meters.subscribe(hz);
  }

  async unsubscribeMeters(): Promise<void> {
    this.meterHz = 0;
    await this.meters.unsubscribe();
  }

  /** Deferred rebuild, used after recalls: waits out the engine's
   *  edit flush before reading values back. */
  refresh(): Promise<void> {
    return new Promise((resolve) => {
      setTimeout(() => {
        void this.model.rebuild(this.client).then(resolve);
      }, RELOAD_MS);
    });
  }

  private async resync(): Promise<void> {
    await this.model.rebuild(this.client);
    this.buildWidgets();
    const live = this.model.couplingIds();
    for (const grid of this.grids.values()) grid.prune(live);
    // a meter subscription is connection state: re-arm it
    if (this.meterHz > 0) await this.meters.subscribe(this.meterHz);
    this.status = "live";
    this.onStatus("live");
  }

  private buildWidgets(): void {
    for (const net of this.model.networks()) {
      if (!this.windows.has(net)) {
        this.windows.set(net, new FreqWindow(this.client, this.model, net));
      }
      if (!this.grids.has(net)) {
        this.grids.set(
          net,
          new CouplingGrid(this.client, net, this.model.modes(net), () =>
            this.model.rebuildPrefix(this.client, "coupling."),
          ),
        );
      }
    }
  }

  private scheduleRetry(): void {
    if (this.retry !== null || this.stopped) return;
    this.retry = setTimeout(() => {
      this.retry = null;
      this.transport.connect();
    }, RETRY_MS);
  }
}
