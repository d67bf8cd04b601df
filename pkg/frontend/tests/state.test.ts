import { describe, expect, it } from "vitest";

import {
  applyDirectory,
  applySnapshot,
  confirmToggle,
  countMalformedSnapshot,
  initialState,
  isQuiescent,
  markTogglePending,
  revertToggle,
  type ConsoleState,
} from "../src/state.js";
import type { StatsSnapshot, StreamDirectoryEntry } from "../src/types.js";

function directory(
  entries: Array<[string, boolean]>,
): StreamDirectoryEntry[] {
  return entries.map(([name, enabled], i) => ({
    id: i,
    name,
    type_id: 1,
    nominal_rate_hz: "200",
    enabled,
  }));
}

function snapshot(
  streams: Array<[string, boolean, number]>,
  state = "running",
): StatsSnapshot {
  return {
    session: { name: "s", state, elapsed_ticks: 10_000_000, store_path: "/x" },
    streams: streams.map(([name, enabled, count], i) => ({
      name,
      stream_id: i,
      enabled,
      message_count: count,
      measured_rate_hz: 199.5,
      last_originating_time: 9_000_000,
      latency_mean_us: 1200,
      latency_max_us: 2400,
      drop_count: 0,
    })),
  };
}

function withDirectory(names: Array<[string, boolean]>): ConsoleState {
  return applyDirectory(initialState(), directory(names));
}

describe("applyDirectory", () => {
  it("mirrors entries", () => {
    const state = withDirectory([["imu", true], ["gaze", false]]);
    expect(state.streams.map((r) => [r.name, r.enabled])).toEqual([
      ["imu", true],
      ["gaze", false],
    ]);
  });

  it("drops rows the server no longer lists", () => {
    const state = withDirectory([["imu", true], ["stale", true]]);
    const refreshed = applyDirectory(state, directory([["imu", true]]));
    expect(refreshed.streams.map((r) => r.name)).toEqual(["imu"]);
  });

  it("keeps pending rows' optimistic value", () => {
    let state = withDirectory([["imu", true]]);
    state = markTogglePending(state, "imu", false);
    state = applyDirectory(state, directory([["imu", true]]));
    const imu = state.streams[0]!;
    expect(imu.pending).toBe(true);
    expect(imu.enabled).toBe(false);
  });
});

describe("applySnapshot", () => {
  it("updates health readouts and session", () => {
    let state = withDirectory([["imu", true]]);
    state = applySnapshot(state, snapshot([["imu", true, 123]]));
    const imu = state.streams[0]!;
    expect(imu.messageCount).toBe(123);
    expect(imu.measuredRateHz).toBeCloseTo(199.5);
    expect(state.session.state).toBe("running");
    expect(state.snapshotCount).toBe(1);
  });

  it("adds unknown streams dynamically", () => {
    let state = withDirectory([["imu", true]]);
    state = applySnapshot(state, snapshot([["imu", true, 1], ["extra", true, 2]]));
    expect(state.streams.map((r) => r.name)).toEqual(["imu", "extra"]);
  });

  it("confirms a pending toggle that the server reflects", () => {
    let state = withDirectory([["imu", true]]);
    state = markTogglePending(state, "imu", false);
    state = applySnapshot(state, snapshot([["imu", false, 5]]));
    const imu = state.streams[0]!;
    expect(imu.pending).toBe(false);
    expect(imu.enabled).toBe(false);
  });

  it("keeps a toggle pending while the server still disagrees", () => {
    let state = withDirectory([["imu", true]]);
    state = markTogglePending(state, "imu", false);
    state = applySnapshot(state, snapshot([["imu", true, 5]]));
    const imu = state.streams[0]!;
    expect(imu.pending).toBe(true);
    expect(imu.enabled).toBe(false);
  });

  it("counts malformed snapshots without touching rows", () => {
    const state = countMalformedSnapshot(withDirectory([["imu", true]]));
    expect(state.malformedSnapshots).toBe(1);
    expect(state.streams).toHaveLength(1);
  });
});

describe("toggle transitions", () => {
  it("pending then confirm", () => {
    let state = withDirectory([["imu", true]]);
    state = markTogglePending(state, "imu", false);
    expect(state.streams[0]!.pending).toBe(true);
    state = confirmToggle(state, "imu", false);
    expect(state.streams[0]!).toMatchObject({ enabled: false, pending: false });
  });

  it("revert restores the previous value", () => {
    let state = withDirectory([["imu", true]]);
    state = markTogglePending(state, "imu", false);
    state = revertToggle(state, "imu", true);
    expect(state.streams[0]!).toMatchObject({ enabled: true, pending: false });
  });
});

describe("quiescence", () => {
  it("requires a snapshot and no pending work", () => {
    let state = withDirectory([["imu", true]]);
    expect(isQuiescent(state)).toBe(false); // no snapshot yet
    state = applySnapshot(state, snapshot([["imu", true, 1]]));
    expect(isQuiescent(state)).toBe(true);
    state = markTogglePending(state, "imu", false);
    expect(isQuiescent(state)).toBe(false);
  });
});
