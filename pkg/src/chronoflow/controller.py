"""Capture controller: stream registry, session lifecycle, live toggles.

The controller owns the durable stream registry (names, kinds, enable
flags) across capture sessions. Each capture session instantiates fresh
simulated sources, a pipeline, and a store writer, so sequence numbers
restart at zero per session and the persisted store is a pure function of
(scenario, commands).
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Any, Callable, Optional

from chronoflow.config import ScenarioConfig, default_scenario_config
from chronoflow.errors import PipelineStateError, UnknownStreamError
from chronoflow.messages import StreamMetadata
from chronoflow.pipeline import (
    DeliveryPolicy,
    Pipeline,
    PipelineMode,
    StoreSink,
)
from chronoflow.simsource import SimSource
from chronoflow.store import StoreWriter
from chronoflow.timebase import Clock, Duration, LiveClock, Timestamp

#: A scheduled command for virtual sessions: offset from session start plus
#: a callable receiving the controller.
ScheduledCommand = tuple[Duration, Callable[["CaptureController"], None]]


class CaptureSession:
    """One active capture: pipeline + store writer wired per the registry."""

    def __init__(self, name: str, scenario: ScenarioConfig,
                 registry: list[StreamMetadata], enabled: dict[str, bool],
                 store_path: Path, epoch: Timestamp,
                 clock: Optional[Clock] = None,
                 policy: Optional[DeliveryPolicy] = None,
                 taps: Optional[list] = None):
        self.name = name
        self.store_path = store_path
        self.epoch = epoch
        mode = scenario.mode
        if mode is PipelineMode.VIRTUAL:
            self.pipeline = Pipeline.virtual(epoch)
        else:
            self.pipeline = Pipeline(PipelineMode.LIVE, clock=clock)
        streams = [StreamMetadata(m.stream_id, m.name, m.type_id,
                                  m.nominal_rate_hz, enabled[m.name])
                   for m in registry]
        self.writer = StoreWriter(store_path, name, streams)
        self.sink = StoreSink(self.writer)
        sink_node = self.pipeline.add_sink(self.sink)
        tap_nodes = [self.pipeline.add_sink(tap) for tap in taps or []]
        for meta, config in zip(registry, scenario.sources):
            source = SimSource(config, stream_id=meta.stream_id, t0=epoch)
            node = self.pipeline.add_source(meta.name, source, meta.type_id,
                                            meta.stream_id)
            node.enabled = enabled[meta.name]
            self.pipeline.connect(node, sink_node, policy)
            for tap_node in tap_nodes:
                self.pipeline.connect(node, tap_node,
                                      DeliveryPolicy.drop_oldest())

    def start(self) -> None:
        self.pipeline.start()

    def stop(self) -> dict[str, Any]:
        self.pipeline.stop()
        assert self.sink.catalog is not None
        return self.sink.catalog


class CaptureController:
    """Owns the registry and the at-most-one active capture session."""

    def __init__(self, scenario: ScenarioConfig,
                 store_root: Optional[Path] = None,
                 clock: Optional[Clock] = None,
                 taps: Optional[list] = None):
        self.scenario = scenario
        self.taps = taps or []
        self.mode = scenario.mode
        self.store_root = Path(store_root) if store_root else \
            (scenario.store_root or Path("sessions"))
        self._registry: list[StreamMetadata] = [
            StreamMetadata(stream_id=i, name=c.name, type_id=c.type_id,
                           nominal_rate_hz=c.rate_hz)
            for i, c in enumerate(scenario.sources)]
        self._by_name = {m.name: m for m in self._registry}
        self._enabled: dict[str, bool] = {m.name: True for m in self._registry}
        self._control = threading.RLock()
        self._session: Optional[CaptureSession] = None
        self._session_start: Optional[Timestamp] = None
        self._last_stats: Optional[dict[str, Any]] = None
        if self.mode is PipelineMode.LIVE:
            self.clock: Clock = clock or LiveClock()
        else:
            self.clock = clock  # per-session virtual clocks

    # -- registry ---------------------------------------------------------------

    def streams(self) -> list[StreamMetadata]:
        with self._control:
            return [StreamMetadata(m.stream_id, m.name, m.type_id,
                                   m.nominal_rate_hz, self._enabled[m.name])
                    for m in self._registry]

    def stream(self, name: str) -> StreamMetadata:
        with self._control:
            meta = self._by_name.get(name)
            if meta is None:
                raise UnknownStreamError(name)
            return StreamMetadata(meta.stream_id, meta.name, meta.type_id,
                                  meta.nominal_rate_hz, self._enabled[name])

    def set_stream_enabled(self, name: str, enabled: bool) -> StreamMetadata:
        """Idempotent toggle; cuts or resumes the live source at the command
        instant when a session is active."""
        with self._control:
            if name not in self._by_name:
                raise UnknownStreamError(name)
            self._enabled[name] = enabled
            if self._session is not None:
                self._session.pipeline.set_source_enabled(name, enabled)
            return self.stream(name)

    # -- session lifecycle --------------------------------------------------------

    @property
    def capture_active(self) -> bool:
        return self._session is not None

    @property
    def session_name(self) -> Optional[str]:
        session = self._session
        return session.name if session else None

    def start_capture(self, session_name: str,
                      store_path: Optional[Path] = None) -> dict[str, Any]:
        if not session_name:
            raise ValueError("session name must be non-empty")
        with self._control:
            if self._session is not None:
                raise PipelineStateError(
                    f"capture {self._session.name!r} already active")
            path = Path(store_path) if store_path else self.store_root / session_name
            epoch = (self.clock.now() if self.mode is PipelineMode.LIVE
                     else Timestamp(self.scenario.epoch_ticks))
            session = CaptureSession(session_name, self.scenario,
                                     self._registry, dict(self._enabled),
                                     path, epoch,
                                     clock=self.clock if self.mode is
                                     PipelineMode.LIVE else None,
                                     taps=self.taps)
            session.start()
            self._session = session
            self._session_start = epoch
            return {"session_name": session_name, "store_path": str(path)}

    def stop_capture(self) -> dict[str, Any]:
        with self._control:
            if self._session is None:
                raise PipelineStateError("no capture session is active")
            session = self._session
            catalog = session.stop()
            self._session = None
            self._session_start = None
            # freeze final counters now that queues are drained
            self._last_stats = self._final_stats(session, catalog)
            return catalog

    def shutdown(self) -> Optional[dict[str, Any]]:
        """Stop any active capture (finalizing its store), then go idle."""
        with self._control:
            if self._session is not None:
                return self.stop_capture()
            return None

    def run_virtual_session(self, session_name: str, duration: Duration,
                            commands: Optional[list[ScheduledCommand]] = None,
                            store_path: Optional[Path] = None) -> dict[str, Any]:
        """Run a whole deterministic session: start, schedule commands,
        deliver every event before session end, stop, finalize."""
        if self.mode is not PipelineMode.VIRTUAL:
            raise PipelineStateError("run_virtual_session needs a virtual scenario")
        with self._control:
            self.start_capture(session_name, store_path=store_path)
            session = self._session
            assert session is not None
            epoch = session.epoch
            for offset, fn in commands or []:
                session.pipeline.schedule(epoch + offset,
                                          lambda fn=fn: fn(self))
            session.pipeline.run_until(epoch + duration)
            return self.stop_capture()

    # -- statistics ---------------------------------------------------------------

    def stats(self) -> dict[str, Any]:
        with self._control:
            if self._session is not None:
                return self._stats_locked()
            if self._last_stats is not None:
                return self._last_stats
            return {
                "session": {"name": None, "state": "idle", "elapsed_ticks": 0,
                            "store_path": None},
                "streams": [self._zero_row(m) for m in self.streams()],
            }

    def _zero_row(self, meta: StreamMetadata) -> dict[str, Any]:
        return {"name": meta.name, "stream_id": meta.stream_id,
                "enabled": meta.enabled, "message_count": 0,
                "last_originating_time": None, "latency_mean_us": None,
                "latency_max_us": None, "drop_count": 0}

    def _stats_locked(self) -> dict[str, Any]:
        session = self._session
        assert session is not None
        raw = session.pipeline.stats()
        rows = []
        for meta in self._registry:
            r = raw[meta.name]
            persisted = r["emitted"] - r["dropped"]
            mean_us = (r["latency_sum_ticks"] / r["emitted"] / 10
                       if r["emitted"] else None)
            rows.append({
                "name": meta.name, "stream_id": meta.stream_id,
                "enabled": self._enabled[meta.name],
                "message_count": persisted,
                "last_originating_time": r["last_originating_time"],
                "latency_mean_us": mean_us,
                "latency_max_us": (r["latency_max_ticks"] / 10
                                   if r["emitted"] else None),
                "drop_count": r["dropped"],
            })
        now = (self.clock.now() if self.mode is PipelineMode.LIVE
               else session.pipeline.clock.now())
        elapsed = now.ticks - session.epoch.ticks
        return {
            "session": {"name": session.name, "state": "running",
                        "elapsed_ticks": elapsed,
                        "store_path": str(session.store_path)},
            "streams": rows,
        }

    def _final_stats(self, session: CaptureSession,
                     catalog: dict[str, Any]) -> dict[str, Any]:
        raw = session.pipeline.stats()
        rows = []
        for meta, entry in zip(self._registry, catalog["streams"]):
            r = raw[meta.name]
            count = entry["message_count"]
            mean_us = (r["latency_sum_ticks"] / r["emitted"] / 10
                       if r["emitted"] else None)
            rows.append({
                "name": meta.name, "stream_id": meta.stream_id,
                "enabled": self._enabled[meta.name],
                "message_count": count,
                "last_originating_time": entry["last_originating_time"],
                "latency_mean_us": mean_us,
                "latency_max_us": (r["latency_max_ticks"] / 10
                                   if r["emitted"] else None),
                "drop_count": r["dropped"],
            })
        return {
            "session": {"name": session.name, "state": "stopped",
                        "elapsed_ticks": None,
                        "store_path": str(session.store_path)},
            "streams": rows,
        }


def create_default_controller(scenario: Optional[ScenarioConfig] = None,
                              store_root: Optional[Path] = None,
                              clock: Optional[Clock] = None) -> CaptureController:
    """Controller preloaded with the nine default streams, all enabled."""
    return CaptureController(scenario or default_scenario_config(),
                             store_root=store_root, clock=clock)
