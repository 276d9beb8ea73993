import { describe, expect, it } from "vitest";
import { ProtocolClient } from "../src/protocol.js";
import { FakeServer, FakeTransport, harmonicDump, settle } from "./fake.js";

function rig() {
  const transport = new FakeTransport(new FakeServer(harmonicDump("s", 4)));
  const client = new ProtocolClient(transport);
  transport.connect();
  return { transport, client };
}

describe("protocol client", () => {
  it("resolves replies in request order", async () => {
    const { client } = rig();
    const a = client.request("PING");
    const b = client.request("GET net.s.f0");
    expect(await a).toBe("OK");
    expect(await b).toBe("VAL net.s.f0 110");
  });

  it("collects LIST rows against the closing OK", async () => {
    const { client } = rig();
    const rows = await client.list("net.s.node.0.");
    expect(rows.length).toBe(5);
    expect(rows.map((r) => r.path)).toContain("net.s.node.0.f0");
  });

  it("routes MTR pushes around a pending LIST without corrupting it", async () => {
    const { transport, client } = rig();
    const pushed: string[] = [];
    client.onPush = (line) => pushed.push(line);
    await client.request("SUB meters 30");
    // meters can fire between a LIST's rows and its OK
    const listing = client.list("net.s.node.1.");
    transport.pushMeters({ "net.s.node.0.energy": 0.5 });
    const rows = await listing;
    expect(rows.length).toBe(5);
    expect(pushed.filter((l) => l.startsWith("MTR")).length).toBe(2);
  });

  it("rejects whatever is pending when the connection drops", async () => {
    const { transport, client } = rig();
    transport.connected = false; // swallow the send
    const p = client.request("PING");
    transport.connected = true;
    transport.drop();
    await expect(p).rejects.toThrow("connection closed");
    await settle();
  });

  it("surfaces ERR replies as values, not exceptions", async () => {
    const { client } = rig();
    expect(await client.request("GET nope.path")).toBe("ERR badpath nope.path");
  });
});
