// Console state and its pure transition functions.
//
// The UI renders from this state and nothing else. Server truth flows in
// through applyDirectory (GET /v1/streams) and applySnapshot (SSE); a
// toggle stays "pending" from the moment the POST is issued until its
// response or a later snapshot confirms it, so the screen never shows an
// unacknowledged value as fact.

import type { StatsSnapshot, StreamDirectoryEntry } from "./types.js";

export type Connection =
  | { kind: "disconnected" }
  | { kind: "connected" }
  | { kind: "error"; message: string };

export interface StreamRow {
  id: number;
  name: string;
  typeId: number;
  nominalRateHz: string;
  enabled: boolean;
  pending: boolean;
  messageCount: number | null;
  measuredRateHz: number | null;
  lastOriginatingTicks: number | null;
  latencyMeanUs: number | null;
  dropCount: number | null;
}

export interface SessionView {
  name: string | null;
  state: string;
  elapsedTicks: number | null;
  storePath: string | null;
}

export interface CaptureSummary {
  sessionName: string;
  counts: { name: string; messageCount: number }[];
}

export interface ConsoleState {
  connection: Connection;
  streams: StreamRow[];
  session: SessionView;
  lastSnapshot: StatsSnapshot | null;
  snapshotCount: number;
  malformedSnapshots: number;
  lastSummary: CaptureSummary | null;
  captureBusy: boolean;
  banner: string | null;
}

export const IDLE_SESSION: SessionView = {
  name: null,
  state: "unknown",
  elapsedTicks: null,
  storePath: null,
};

export function initialState(): ConsoleState {
  return {
    connection: { kind: "disconnected" },
    streams: [],
    session: IDLE_SESSION,
    lastSnapshot: null,
    snapshotCount: 0,
    malformedSnapshots: 0,
    lastSummary: null,
    captureBusy: false,
    banner: null,
  };
}

function blankRow(name: string): StreamRow {
  return {
    id: -1,
    name,
    typeId: 0,
    nominalRateHz: "?",
    enabled: false,
    pending: false,
    messageCount: null,
    measuredRateHz: null,
    lastOriginatingTicks: null,
    latencyMeanUs: null,
    dropCount: null,
  };
}

export function setConnection(state: ConsoleState, connection: Connection): ConsoleState {
  return { ...state, connection };
}

export function setBanner(state: ConsoleState, banner: string | null): ConsoleState {
  return { ...state, banner };
}

/** Mirror of GET /v1/streams: adds new rows, updates identity fields,
 * drops rows the server no longer lists (stale streams disappear on the
 * next directory refresh). Pending rows keep their pending flag. */
export function applyDirectory(state: ConsoleState, entries: StreamDirectoryEntry[]): ConsoleState {
  const existing = new Map(state.streams.map((row) => [row.name, row]));
  const streams = entries.map((entry) => {
    const row = existing.get(entry.name) ?? blankRow(entry.name);
    return {
      ...row,
      id: entry.id,
      name: entry.name,
      typeId: entry.type_id,
      nominalRateHz: entry.nominal_rate_hz,
      enabled: row.pending ? row.enabled : entry.enabled,
    };
  });
  return { ...state, streams };
}

/** One SSE stats snapshot. Unknown streams gain rows dynamically; enabled
 * flags of pending rows are left to their in-flight toggles. */
export function applySnapshot(state: ConsoleState, snapshot: StatsSnapshot): ConsoleState {
  const byName = new Map(state.streams.map((row) => [row.name, row]));
  const seen = new Set<string>();
  const streams: StreamRow[] = [];
  for (const row of snapshot.streams) {
    seen.add(row.name);
    const current = byName.get(row.name) ?? blankRow(row.name);
    streams.push({
      ...current,
      id: current.id >= 0 ? current.id : row.stream_id,
      enabled: current.pending ? current.enabled : row.enabled,
      pending: current.pending && current.enabled !== row.enabled,
      messageCount: row.message_count,
      measuredRateHz: row.measured_rate_hz ?? null,
      lastOriginatingTicks: row.last_originating_time,
      latencyMeanUs: row.latency_mean_us,
      dropCount: row.drop_count,
    });
  }
  for (const row of state.streams) {
    if (!seen.has(row.name)) streams.push(row);
  }
  return {
    ...state,
    streams,
    session: {
      name: snapshot.session.name,
      state: snapshot.session.state,
      elapsedTicks: snapshot.session.elapsed_ticks,
      storePath: snapshot.session.store_path,
    },
    lastSnapshot: snapshot,
    snapshotCount: state.snapshotCount + 1,
  };
}

export function countMalformedSnapshot(state: ConsoleState): ConsoleState {
  return { ...state, malformedSnapshots: state.malformedSnapshots + 1 };
}

/** Optimistic-pending toggle: flip immediately, mark pending. */
export function markTogglePending(state: ConsoleState, name: string, enabled: boolean): ConsoleState {
  return {
    ...state,
    streams: state.streams.map((row) =>
      row.name === name ? { ...row, enabled, pending: true } : row,
    ),
  };
}

/** Server acknowledged the toggle with its new state. */
export function confirmToggle(state: ConsoleState, name: string, enabled: boolean): ConsoleState {
  return {
    ...state,
    streams: state.streams.map((row) =>
      row.name === name ? { ...row, enabled, pending: false } : row,
    ),
  };
}

/** The POST failed: revert the row to the given previous value. */
export function revertToggle(state: ConsoleState, name: string, enabled: boolean): ConsoleState {
  return {
    ...state,
    streams: state.streams.map((row) =>
      row.name === name ? { ...row, enabled, pending: false } : row,
    ),
  };
}

export function removeStream(state: ConsoleState, name: string): ConsoleState {
  return { ...state, streams: state.streams.filter((row) => row.name !== name) };
}

export function setCaptureBusy(state: ConsoleState, captureBusy: boolean): ConsoleState {
  return { ...state, captureBusy };
}

export function applyStopSummary(state: ConsoleState, summary: CaptureSummary): ConsoleState {
  return { ...state, lastSummary: summary };
}

/** True when nothing is in flight and at least one snapshot has arrived:
 * the rendered enabled flags must equal the server's directory. */
export function isQuiescent(state: ConsoleState): boolean {
  return (
    state.snapshotCount > 0 &&
    !state.captureBusy &&
    state.streams.every((row) => !row.pending)
  );
}
