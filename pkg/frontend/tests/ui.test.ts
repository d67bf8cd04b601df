// @vitest-environment jsdom
import { describe, expect, it } from "vitest";

import { OperatorConsole } from "../src/console.js";
import {
  applyDirectory,
  applySnapshot,
  initialState,
  markTogglePending,
  setConnection,
} from "../src/state.js";
import { render } from "../src/ui.js";
import type { StatsSnapshot } from "../src/types.js";

const DIRECTORY = [
  { id: 0, name: "imu", type_id: 1, nominal_rate_hz: "200", enabled: true },
  { id: 1, name: "rgb_video", type_id: 7, nominal_rate_hz: "30", enabled: false },
];

const SNAPSHOT: StatsSnapshot = {
  session: { name: "demo", state: "running", elapsed_ticks: 20_000_000,
             store_path: "/tmp/demo" },
  streams: [
    { name: "imu", stream_id: 0, enabled: true, message_count: 400,
      measured_rate_hz: 199.8, last_originating_time: 19_000_000,
      latency_mean_us: 1500, latency_max_us: 2400, drop_count: 0 },
    { name: "rgb_video", stream_id: 1, enabled: false, message_count: 0,
      measured_rate_hz: 0, last_originating_time: null,
      latency_mean_us: null, latency_max_us: null, drop_count: 0 },
  ],
};

function operatorStub(): OperatorConsole {
  return new OperatorConsole({
    baseUrl: "http://svc",
    fetchFn: (async () => new Response("{}")) as typeof fetch,
  });
}

describe("render", () => {
  it("draws one row per stream with toggles reflecting state", () => {
    const root = document.createElement("div");
    let state = applyDirectory(initialState(), DIRECTORY);
    state = applySnapshot(state, SNAPSHOT);
    render(root, state, operatorStub());
    const rows = root.querySelectorAll("table.streams tr");
    expect(rows).toHaveLength(3); // header + 2 streams
    const buttons = root.querySelectorAll("button.toggle");
    expect(buttons[0]!.textContent).toBe("on");
    expect(buttons[1]!.textContent).toBe("off");
    expect(root.textContent).toContain("199.8");
    expect(root.textContent).toContain("recording demo");
  });

  it("disables a pending row's toggle", () => {
    const root = document.createElement("div");
    let state = applyDirectory(initialState(), DIRECTORY);
    state = markTogglePending(state, "imu", false);
    render(root, state, operatorStub());
    const button = root.querySelector(
      'button.toggle[data-stream="imu"]',
    ) as HTMLButtonElement;
    expect(button.disabled).toBe(true);
    expect(button.textContent).toBe("...");
  });

  it("shows connection state and banner", () => {
    const root = document.createElement("div");
    let state = applyDirectory(initialState(), DIRECTORY);
    state = setConnection(state, { kind: "error", message: "boom" });
    render(root, { ...state, banner: "session already active" },
           operatorStub());
    expect(root.querySelector(".conn.error")!.textContent).toContain("boom");
    expect(root.querySelector(".banner")!.textContent).toBe(
      "session already active",
    );
  });

  it("start disabled while a session is active, stop enabled", () => {
    const root = document.createElement("div");
    let state = applyDirectory(initialState(), DIRECTORY);
    state = applySnapshot(state, SNAPSHOT); // running
    render(root, state, operatorStub());
    const start = root.querySelector("button.start") as HTMLButtonElement;
    const stop = root.querySelector("button.stop") as HTMLButtonElement;
    expect(start.disabled).toBe(true);
    expect(stop.disabled).toBe(false);
  });
});
