// Thin typed client for the capture service's control API.

import type { StatsSnapshot, StopSummary, StreamDirectoryEntry } from "./types.js";

export class ApiError extends Error {
  status: number;

  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

export type FetchLike = typeof fetch;

async function requestJson<T>(
  fetchFn: FetchLike,
  url: string,
  init?: RequestInit,
): Promise<T> {
  const response = await fetchFn(url, init);
  const text = await response.text();
  let parsed: unknown = null;
  try {
    parsed = text ? JSON.parse(text) : null;
  } catch {
    parsed = null;
  }
  if (!response.ok) {
    const message =
      parsed && typeof parsed === "object" && "error" in parsed
        ? String((parsed as { error: unknown }).error)
        : `HTTP ${response.status}`;
    throw new ApiError(response.status, message);
  }
  return parsed as T;
}

export function makeApi(baseUrl: string, fetchFn: FetchLike = fetch) {
  const base = baseUrl.replace(/\/$/, "");
  return {
    async streams(): Promise<StreamDirectoryEntry[]> {
      const body = await requestJson<{ streams: StreamDirectoryEntry[] }>(
        fetchFn,
        `${base}/v1/streams`,
      );
      return body.streams;
    },

    async setStreamEnabled(name: string, enabled: boolean): Promise<boolean> {
      const action = enabled ? "enable" : "disable";
      const body = await requestJson<{ name: string; enabled: boolean }>(
        fetchFn,
        `${base}/v1/streams/${encodeURIComponent(name)}/${action}`,
        { method: "POST" },
      );
      return body.enabled;
    },

    async startCapture(sessionName: string): Promise<void> {
      await requestJson(fetchFn, `${base}/v1/capture/start`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ session_name: sessionName }),
      });
    },

    async stopCapture(): Promise<StopSummary> {
      return requestJson<StopSummary>(fetchFn, `${base}/v1/capture/stop`, {
        method: "POST",
      });
    },

    async stats(): Promise<StatsSnapshot> {
      return requestJson<StatsSnapshot>(fetchFn, `${base}/v1/stats`);
    },

    eventsUrl(): string {
      return `${base}/v1/events`;
    },
  };
}

export type Api = ReturnType<typeof makeApi>;
