// The console controller: wires the API client and the SSE feed into the
// state module and exposes the operator actions. Framework-free; the DOM
// layer subscribes and re-renders on every state change.

import { ApiError, makeApi, type Api, type FetchLike } from "./api.js";
import {
  applyDirectory,
  applySnapshot,
  applyStopSummary,
  confirmToggle,
  countMalformedSnapshot,
  initialState,
  isQuiescent,
  markTogglePending,
  removeStream,
  revertToggle,
  setBanner,
  setCaptureBusy,
  setConnection,
  type ConsoleState,
} from "./state.js";
import { startSse, type SseHandle } from "./sse.js";
import type { StatsSnapshot } from "./types.js";

export interface ConsoleOptions {
  baseUrl: string;
  fetchFn?: FetchLike;
  sseSleep?: (ms: number) => Promise<void>;
}

export type Listener = (state: ConsoleState) => void;

export class OperatorConsole {
  readonly api: Api;
  private current: ConsoleState = initialState();
  private listeners = new Set<Listener>();
  private sse: SseHandle | null = null;
  private options: ConsoleOptions;

  constructor(options: ConsoleOptions) {
    this.options = options;
    this.api = makeApi(options.baseUrl, options.fetchFn);
  }

  state(): ConsoleState {
    return this.current;
  }

  quiescent(): boolean {
    return isQuiescent(this.current);
  }

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    listener(this.current);
    return () => this.listeners.delete(listener);
  }

  private update(next: ConsoleState): void {
    this.current = next;
    for (const listener of this.listeners) listener(next);
  }

  /** Fetch the directory and start the SSE subscription. */
  async connect(): Promise<void> {
    await this.refreshStreams();
    this.sse = startSse({
      url: this.api.eventsUrl(),
      fetchFn: this.options.fetchFn,
      sleep: this.options.sseSleep,
      onEvent: (data) => this.onSnapshotEvent(data),
      onConnectionChange: (connected) => {
        this.update(
          setConnection(this.current, connected ? { kind: "connected" } : { kind: "disconnected" }),
        );
      },
    });
  }

  dispose(): void {
    this.sse?.stop();
    this.sse = null;
  }

  /** A malformed snapshot is counted and skipped, never thrown. */
  private onSnapshotEvent(data: string): void {
    let snapshot: StatsSnapshot;
    try {
      snapshot = JSON.parse(data) as StatsSnapshot;
      if (!snapshot || !Array.isArray(snapshot.streams) || !snapshot.session) {
        throw new Error("not a snapshot");
      }
    } catch {
      this.update(countMalformedSnapshot(this.current));
      return;
    }
    this.update(applySnapshot(this.current, snapshot));
  }

  async refreshStreams(): Promise<void> {
    try {
      const entries = await this.api.streams();
      this.update(applyDirectory(this.current, entries));
    } catch (error) {
      this.update(setConnection(this.current, { kind: "error", message: String(error) }));
      throw error;
    }
  }

  async refreshStats(): Promise<void> {
    const snapshot = await this.api.stats();
    this.update(applySnapshot(this.current, snapshot));
  }

  /** Optimistic-pending toggle; reverts and surfaces the server message on
   * failure, and drops rows the server no longer knows (404). */
  async toggleStream(name: string): Promise<void> {
    const row = this.current.streams.find((r) => r.name === name);
    if (!row || row.pending) return;
    const previous = row.enabled;
    const wanted = !previous;
    this.update(setBanner(markTogglePending(this.current, name, wanted), null));
    try {
      const confirmed = await this.api.setStreamEnabled(name, wanted);
      this.update(confirmToggle(this.current, name, confirmed));
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) {
        this.update(setBanner(removeStream(this.current, name), error.message));
        void this.refreshStreams().catch(() => undefined);
      } else {
        this.update(setBanner(revertToggle(this.current, name, previous), String(error)));
      }
    }
  }

  /** Client-side validation: an empty name sends nothing. */
  async startCapture(sessionName: string): Promise<boolean> {
    const name = sessionName.trim();
    if (!name) {
      this.update(setBanner(this.current, "session name must not be empty"));
      return false;
    }
    this.update(setCaptureBusy(setBanner(this.current, null), true));
    try {
      await this.api.startCapture(name);
      await this.refreshStats();
      return true;
    } catch (error) {
      const banner =
        error instanceof ApiError && error.status === 409
          ? `session already active: ${error.message}`
          : String(error);
      this.update(setBanner(this.current, banner));
      await this.refreshStats().catch(() => undefined);
      return false;
    } finally {
      this.update(setCaptureBusy(this.current, false));
    }
  }

  async stopCapture(): Promise<boolean> {
    this.update(setCaptureBusy(setBanner(this.current, null), true));
    try {
      const summary = await this.api.stopCapture();
      this.update(
        applyStopSummary(this.current, {
          sessionName: summary.session_name,
          counts: summary.streams.map((s) => ({
            name: s.name,
            messageCount: s.message_count,
          })),
        }),
      );
      await this.refreshStats();
      return true;
    } catch (error) {
      const banner =
        error instanceof ApiError && error.status === 409
          ? "no capture session is active"
          : String(error);
      this.update(setBanner(this.current, banner));
      await this.refreshStats().catch(() => undefined);
      return false;
    } finally {
      this.update(setCaptureBusy(this.current, false));
    }
  }
}
