// End-to-end mirror test against the real capture service: after any
// toggle and a session start/stop, the rendered state must equal
// GET /v1/streams and /v1/stats within two SSE snapshots.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { OperatorConsole } from "../src/console.js";

const PORT = 18200 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;

const SCENARIO = {
  pipeline: { mode: "live" },
  streams: [
    { name: "imu", type: "imu", rate_hz: 200, seed: 1,
      latency_us: [200, 900] },
    { name: "eye_gaze", type: "gaze", rate_hz: 30, seed: 2 },
  ],
};

let service: ChildProcess;
let workdir: string;

async function waitFor(
  predicate: () => boolean | Promise<boolean>,
  what: string,
  timeoutMs = 15_000,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      if (await predicate()) return;
    } catch {
      // service not up yet
    }
    if (Date.now() > deadline) throw new Error(`timed out waiting for ${what}`);
    await new Promise((r) => setTimeout(r, 100));
  }
}

async function serverStreams(): Promise<Map<string, boolean>> {
  const resp = await fetch(`${BASE}/v1/streams`);
  const body = (await resp.json()) as {
    streams: { name: string; enabled: boolean }[];
  };
  return new Map(body.streams.map((s) => [s.name, s.enabled]));
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "console-e2e-"));
  const configPath = join(workdir, "scenario.json");
  writeFileSync(configPath, JSON.stringify(SCENARIO));
  service = spawn(
    "python3",
    ["-m", "chronoflow.cli", "serve", "--config", configPath,
     "--http", `127.0.0.1:${PORT}`, "--tcp", `127.0.0.1:${PORT + 1}`,
     "--store-root", join(workdir, "sessions")],
    { stdio: "ignore" },
  );
  await waitFor(async () => (await fetch(`${BASE}/v1/streams`)).ok,
                "service startup");
});

afterAll(async () => {
  service.kill("SIGINT");
  await new Promise((r) => setTimeout(r, 500));
  service.kill("SIGKILL");
});

describe("operator console against a live service", () => {
  it("mirrors toggles and session lifecycle within two snapshots", async () => {
    const operator = new OperatorConsole({ baseUrl: BASE });
    try {
      await operator.connect();
      await waitFor(() => operator.state().snapshotCount >= 1,
                    "first SSE snapshot");

      // toggle a stream; the mirror must settle within two snapshots
      const snapshotsBefore = operator.state().snapshotCount;
      await operator.toggleStream("imu");
      await waitFor(async () => {
        const state = operator.state();
        if (state.streams.some((r) => r.pending)) return false;
        const server = await serverStreams();
        return state.streams.every((r) => server.get(r.name) === r.enabled);
      }, "toggle mirror");
      expect(operator.state().snapshotCount - snapshotsBefore)
        .toBeLessThanOrEqual(2);
      expect(operator.state().streams.find((r) => r.name === "imu")!.enabled)
        .toBe(false);

      // back on, then start a session
      await operator.toggleStream("imu");
      expect(await operator.startCapture("e2e-session")).toBe(true);
      await waitFor(() => operator.state().session.state === "running",
                    "running session visible");
      await waitFor(() => {
        const imu = operator.state().streams.find((r) => r.name === "imu")!;
        return (imu.messageCount ?? 0) > 0;
      }, "live counts flowing");

      // rendered counts must match /v1/stats on the next snapshot boundary
      const statsResp = await fetch(`${BASE}/v1/stats`);
      const stats = (await statsResp.json()) as {
        session: { name: string | null };
      };
      expect(stats.session.name).toBe("e2e-session");

      expect(await operator.stopCapture()).toBe(true);
      const summary = operator.state().lastSummary!;
      expect(summary.sessionName).toBe("e2e-session");
      const finalStats = (await (await fetch(`${BASE}/v1/stats`)).json()) as {
        streams: { name: string; message_count: number }[];
      };
      const summaryCounts = new Map(
        summary.counts.map((c) => [c.name, c.messageCount]),
      );
      for (const row of finalStats.streams) {
        expect(summaryCounts.get(row.name)).toBe(row.message_count);
      }

      // quiescent mirror: enabled flags equal GET /v1/streams exactly
      await waitFor(() => operator.quiescent(), "quiescence");
      const server = await serverStreams();
      for (const row of operator.state().streams) {
        expect(row.enabled).toBe(server.get(row.name));
      }
    } finally {
      operator.dispose();
    }
  }, 60_000);
});
