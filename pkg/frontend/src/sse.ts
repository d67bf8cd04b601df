// Server-sent-events reader over fetch with explicit reconnect backoff.
//
// fetch + ReadableStream instead of EventSource so the same code runs in
// the browser and under node-based tests, and so reconnect timing (1 s
// base doubling to a 30 s cap) is ours rather than the browser's.

import type { FetchLike } from "./api.js";

export interface SseOptions {
  url: string;
  onEvent: (data: string) => void;
  onConnectionChange?: (connected: boolean, nextDelayMs: number | null) => void;
  fetchFn?: FetchLike;
  baseDelayMs?: number;
  maxDelayMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

export interface SseHandle {
  stop(): void;
  done: Promise<void>;
}

export function backoffDelayMs(attempt: number, base = 1000, cap = 30000): number {
  return Math.min(cap, base * 2 ** Math.max(0, attempt - 1));
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export function startSse(options: SseOptions): SseHandle {
  const fetchFn = options.fetchFn ?? fetch;
  const base = options.baseDelayMs ?? 1000;
  const cap = options.maxDelayMs ?? 30000;
  const sleep = options.sleep ?? defaultSleep;
  let stopped = false;
  let controller: AbortController | null = null;

  async function readStream(body: ReadableStream<Uint8Array>): Promise<void> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffer += decoder.decode(value, { stream: true });
      let cut: number;
      while ((cut = buffer.indexOf("\n\n")) >= 0) {
        const chunk = buffer.slice(0, cut);
        buffer = buffer.slice(cut + 2);
        for (const line of chunk.split("\n")) {
          if (line.startsWith("data: ")) options.onEvent(line.slice(6));
          else if (line.startsWith("data:")) options.onEvent(line.slice(5));
        }
      }
    }
  }

  const done = (async () => {
    let attempt = 0;
    while (!stopped) {
      controller = new AbortController();
      try {
        const response = await fetchFn(options.url, {
          headers: { Accept: "text/event-stream" },
          signal: controller.signal,
        });
        if (!response.ok || !response.body) {
          throw new Error(`SSE endpoint answered ${response.status}`);
        }
        attempt = 0;
        options.onConnectionChange?.(true, null);
        await readStream(response.body);
      } catch {
        // fall through to reconnect
      }
      if (stopped) break;
      attempt += 1;
      const delay = backoffDelayMs(attempt, base, cap);
      options.onConnectionChange?.(false, delay);
      await sleep(delay);
    }
    options.onConnectionChange?.(false, null);
  })();

  return {
    stop() {
      stopped = true;
      controller?.abort();
    },
    done,
  };
}
