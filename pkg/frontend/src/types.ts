// DTOs exactly as the capture service's control API emits them.

export interface StreamDirectoryEntry {
  id: number;
  name: string;
  type_id: number;
  nominal_rate_hz: string;
  enabled: boolean;
}

export interface StatsStreamRow {
  name: string;
  stream_id: number;
  enabled: boolean;
  message_count: number;
  measured_rate_hz?: number;
  last_originating_time: number | null;
  latency_mean_us: number | null;
  latency_max_us: number | null;
  drop_count: number;
}

export interface StatsSession {
  name: string | null;
  state: string;
  elapsed_ticks: number | null;
  store_path: string | null;
}

export interface StatsSnapshot {
  session: StatsSession;
  streams: StatsStreamRow[];
}

export interface StopSummary {
  session_name: string;
  session_id: string;
  streams: { name: string; message_count: number }[];
}
