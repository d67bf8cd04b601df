"""HTTP control plane for live capture: stream toggles, session
start/stop, statistics, and a server-sent-events telemetry feed.

The control plane is deliberately separate from the binary TCP data
plane: everything here is JSON over HTTP, scriptable with curl and
consumable by the browser console. Handlers never touch pipeline
internals; they go through the controller's serialized control surface.

Endpoints:
  GET  /v1/streams                      stream directory with enable flags
  POST /v1/streams/{name}/enable        idempotent toggle
  POST /v1/streams/{name}/disable
  POST /v1/capture/start {"session_name": ...}   409 when active
  POST /v1/capture/stop                 finalizes the store, returns catalog
  GET  /v1/stats                        SessionStats snapshot
  GET  /v1/events                       SSE, one stats snapshot per second
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from chronoflow.controller import CaptureController
from chronoflow.errors import PipelineStateError, UnknownStreamError

STATS_INTERVAL_SECONDS = 1.0
RATE_WINDOW_SECONDS = 2.0


class _RateTracker:
    """Sliding-window message rates from periodic count samples."""

    def __init__(self, window: float = RATE_WINDOW_SECONDS):
        self._window = window
        self._history: deque[tuple[float, dict[str, int]]] = deque()
        self._lock = threading.Lock()

    def sample(self, wall: float, counts: dict[str, int]) -> None:
        with self._lock:
            self._history.append((wall, counts))
            while self._history and wall - self._history[0][0] > self._window + 0.5:
                self._history.popleft()

    def rates(self, wall: float) -> dict[str, float]:
        with self._lock:
            recent = [(t, c) for t, c in self._history if wall - t <= self._window]
            if len(recent) < 2:
                return {}
            t0, c0 = recent[0]
            t1, c1 = recent[-1]
            if t1 <= t0:
                return {}
            return {name: max(0.0, (c1.get(name, 0) - c0.get(name, 0)) / (t1 - t0))
                    for name in c1}

    def reset(self) -> None:
        with self._lock:
            self._history.clear()


class CaptureService:
    """Owns the HTTP server and the once-per-second stats publisher."""

    def __init__(self, controller: CaptureController, host: str = "127.0.0.1",
                 port: int = 0):
        self.controller = controller
        self._rates = _RateTracker()
        self._latest: dict[str, Any] = self.build_stats()
        self._publish = threading.Condition()
        self._stop = threading.Event()
        service = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):
                pass

            def do_OPTIONS(self):
                self.send_response(204)
                service._cors(self)
                self.send_header("Content-Length", "0")
                self.end_headers()

            def do_GET(self):
                service.handle_get(self)

            def do_POST(self):
                service.handle_post(self)

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._httpd.daemon_threads = True
        self.host, self.port = self._httpd.server_address[:2]
        self._http_thread = threading.Thread(target=self._httpd.serve_forever,
                                             name="capture-http", daemon=True)
        self._stats_thread = threading.Thread(target=self._stats_loop,
                                              name="capture-stats", daemon=True)

    # -- lifecycle --------------------------------------------------------------

    def start(self) -> "CaptureService":
        self._http_thread.start()
        self._stats_thread.start()
        return self

    def close(self) -> None:
        """Stop-before-exit: finalize any active session, then shut down."""
        self.controller.shutdown()
        self._stop.set()
        with self._publish:
            self._publish.notify_all()
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()

    # -- stats -------------------------------------------------------------------

    def build_stats(self) -> dict[str, Any]:
        raw = self.controller.stats()
        wall = time.monotonic()
        counts = {row["name"]: row["message_count"] for row in raw["streams"]}
        if raw["session"]["state"] == "running":
            self._rates.sample(wall, counts)
        rates = self._rates.rates(wall)
        for row in raw["streams"]:
            row["measured_rate_hz"] = round(rates.get(row["name"], 0.0), 3)
        return raw

    def _stats_loop(self) -> None:
        while not self._stop.wait(STATS_INTERVAL_SECONDS):
            snapshot = self.build_stats()
            with self._publish:
                self._latest = snapshot
                self._publish.notify_all()

    # -- request handling ----------------------------------------------------------

    @staticmethod
    def _cors(handler: BaseHTTPRequestHandler) -> None:
        handler.send_header("Access-Control-Allow-Origin", "*")
        handler.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        handler.send_header("Access-Control-Allow-Headers", "Content-Type")

    def _send_json(self, handler: BaseHTTPRequestHandler, status: int,
                   payload: dict[str, Any]) -> None:
        body = json.dumps(payload).encode("utf-8")
        handler.send_response(status)
        self._cors(handler)
        handler.send_header("Content-Type", "application/json")
        handler.send_header("Content-Length", str(len(body)))
        handler.end_headers()
        handler.wfile.write(body)

    def _streams_payload(self) -> dict[str, Any]:
        return {"streams": [
            {"id": s.stream_id, "name": s.name, "type_id": int(s.type_id),
             "nominal_rate_hz": str(s.nominal_rate_hz), "enabled": s.enabled}
            for s in self.controller.streams()]}

    def handle_get(self, handler: BaseHTTPRequestHandler) -> None:
        path = handler.path.split("?", 1)[0].rstrip("/")
        if path == "/v1/streams":
            self._send_json(handler, 200, self._streams_payload())
        elif path == "/v1/stats":
            self._send_json(handler, 200, self.build_stats())
        elif path == "/v1/events":
            self._serve_events(handler)
        else:
            self._send_json(handler, 404, {"error": f"no such path {path}"})

    def handle_post(self, handler: BaseHTTPRequestHandler) -> None:
        path = handler.path.split("?", 1)[0].rstrip("/")
        try:
            if path.startswith("/v1/streams/"):
                parts = path.split("/")
                if len(parts) == 5 and parts[4] in ("enable", "disable"):
                    meta = self.controller.set_stream_enabled(
                        parts[3], parts[4] == "enable")
                    self._send_json(handler, 200, {"name": meta.name,
                                                   "enabled": meta.enabled})
                    return
                self._send_json(handler, 404, {"error": f"no such path {path}"})
            elif path == "/v1/capture/start":
                body = self._read_body(handler)
                name = body.get("session_name")
                if not name or not isinstance(name, str):
                    self._send_json(handler, 400,
                                    {"error": "session_name is required"})
                    return
                info = self.controller.start_capture(name)
                self._rates.reset()
                self._send_json(handler, 200, info)
            elif path == "/v1/capture/stop":
                catalog = self.controller.stop_capture()
                self._send_json(handler, 200, {
                    "session_name": catalog["session_name"],
                    "session_id": catalog["session_id"],
                    "streams": [
                        {"name": s["name"], "message_count": s["message_count"]}
                        for s in catalog["streams"]],
                })
            else:
                self._send_json(handler, 404, {"error": f"no such path {path}"})
        except UnknownStreamError as exc:
            self._send_json(handler, 404, {"error": str(exc)})
        except PipelineStateError as exc:
            self._send_json(handler, 409, {"error": str(exc)})
        except (ValueError, json.JSONDecodeError) as exc:
            self._send_json(handler, 400, {"error": str(exc)})

    @staticmethod
    def _read_body(handler: BaseHTTPRequestHandler) -> dict[str, Any]:
        length = int(handler.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        raw = handler.rfile.read(length)
        parsed = json.loads(raw.decode("utf-8"))
        if not isinstance(parsed, dict):
            raise ValueError("request body must be a JSON object")
        return parsed

    def _serve_events(self, handler: BaseHTTPRequestHandler) -> None:
        handler.send_response(200)
        self._cors(handler)
        handler.send_header("Content-Type", "text/event-stream")
        handler.send_header("Cache-Control", "no-cache")
        handler.send_header("Connection", "close")
        handler.end_headers()
        try:
            snapshot = self._latest
            handler.wfile.write(b"data: " + json.dumps(snapshot).encode("utf-8")
                                + b"\n\n")
            handler.wfile.flush()
            while not self._stop.is_set():
                with self._publish:
                    if not self._publish.wait(timeout=2 * STATS_INTERVAL_SECONDS):
                        continue
                    snapshot = self._latest
                handler.wfile.write(b"data: " + json.dumps(snapshot).encode("utf-8")
                                    + b"\n\n")
                handler.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, OSError):
            return
