"""Event-driven capture pipeline: sources, sinks, bounded connections.

Two execution modes with one API:

* Virtual: a single-threaded discrete-event scheduler delivers messages
  in (originating_time, stream_id, sequence) order on a virtual clock.
  Scheduled control commands run before same-instant emissions. Output is
  bit-deterministic regardless of host scheduling.
* Live: each source runs in its own producer thread, each connection is a
  bounded queue with an explicit overflow policy, and each connection has
  a consumer thread feeding its sink.

State machine: Created -> Running -> Stopping -> Stopped, one way only.
stop() drains every queue into its sink and closes the sinks, so nothing
emitted-but-undropped is lost.
"""

from __future__ import annotations

import enum
import threading
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional, Protocol

from chronoflow.codecs import encode_payload
from chronoflow.errors import (
    ConfigError,
    PipelineStateError,
    QueueOverflowError,
    UnknownStreamError,
)
from chronoflow.messages import Message
from chronoflow.timebase import Clock, Duration, LiveClock, Timestamp, VirtualClock


class PipelineMode(enum.Enum):
    LIVE = "live"
    VIRTUAL = "virtual"


class PipelineState(enum.Enum):
    CREATED = "created"
    RUNNING = "running"
    STOPPING = "stopping"
    STOPPED = "stopped"


class Overflow(enum.Enum):
    BLOCK_SOURCE = "block_source"
    DROP_OLDEST = "drop_oldest"
    ERROR = "error"


@dataclass(frozen=True, slots=True)
class DeliveryPolicy:
    queue_capacity: int = 1024
    overflow: Overflow = Overflow.BLOCK_SOURCE

    def __post_init__(self):
        if self.queue_capacity < 1:
            raise ConfigError("queue capacity must be >= 1")

    @classmethod
    def block(cls, capacity: int = 1024) -> "DeliveryPolicy":
        return cls(capacity, Overflow.BLOCK_SOURCE)

    @classmethod
    def drop_oldest(cls, capacity: int = 1024) -> "DeliveryPolicy":
        return cls(capacity, Overflow.DROP_OLDEST)

    @classmethod
    def error(cls, capacity: int = 1024) -> "DeliveryPolicy":
        return cls(capacity, Overflow.ERROR)


class MessageSource(Protocol):
    """What a pipeline source must provide (SimSource satisfies this)."""

    def peek_next_time(self) -> Timestamp: ...
    def emit(self) -> Message: ...
    def generate_until(self, t_end: Timestamp) -> list[Message]: ...
    def skip_to(self, resume: Timestamp) -> None: ...


class Sink(Protocol):
    def receive(self, message: Message) -> None: ...
    def close(self) -> None: ...


class CollectorSink:
    """Buffers everything it receives; test and inspection helper."""

    def __init__(self, expected_type_id: Optional[int] = None):
        self.expected_type_id = expected_type_id
        self.messages: list[Message] = []
        self.closed = False

    def receive(self, message: Message) -> None:
        if self.closed:
            raise PipelineStateError("sink is closed")
        self.messages.append(message)

    def close(self) -> None:
        self.closed = True


class StoreSink:
    """Writes messages into a StoreWriter, encoding typed payloads once."""

    def __init__(self, writer, finalize_on_close: bool = True):
        self._writer = writer
        self._finalize_on_close = finalize_on_close
        self._lock = threading.Lock()
        self.catalog: Optional[dict] = None

    def receive(self, message: Message) -> None:
        payload = message.payload
        if not isinstance(payload, (bytes, bytearray, memoryview)):
            payload = encode_payload(payload)
        with self._lock:
            self._writer.write(message.envelope, payload)

    def close(self) -> None:
        if self._finalize_on_close and self.catalog is None:
            with self._lock:
                self.catalog = self._writer.finalize()


class _Counters:
    """Per-stream emission tallies, written only by the owning producer."""

    __slots__ = ("emitted", "last_originating", "latency_sum", "latency_max")

    def __init__(self):
        self.emitted = 0
        self.last_originating: Optional[int] = None
        self.latency_sum = 0
        self.latency_max = 0

    def note_batch(self, batch: list[Message]) -> None:
        self.emitted += len(batch)
        env = batch[-1].envelope
        self.last_originating = env.originating_time.ticks
        for m in batch:
            lat = m.envelope.creation_time.ticks - m.envelope.originating_time.ticks
            self.latency_sum += lat
            if lat > self.latency_max:
                self.latency_max = lat


class Connection:
    """Bounded single-producer/single-consumer message queue."""

    def __init__(self, policy: DeliveryPolicy):
        self.policy = policy
        self.sink_node: Optional["SinkNode"] = None
        self._dq: deque[Message] = deque()
        self._lock = threading.Lock()
        self._not_empty = threading.Condition(self._lock)
        self._not_full = threading.Condition(self._lock)
        self._closed = False
        self.dropped = 0
        self.delivered = 0

    def put_batch(self, batch: list[Message]) -> None:
        if not batch:
            return
        capacity = self.policy.queue_capacity
        overflow = self.policy.overflow
        with self._lock:
            if overflow is Overflow.BLOCK_SOURCE:
                i = 0
                while i < len(batch):
                    if self._closed:
                        return  # shutting down; remaining messages are discarded
                    free = capacity - len(self._dq)
                    if free <= 0:
                        self._not_full.wait(timeout=0.1)
                        continue
                    take = batch[i:i + free]
                    self._dq.extend(take)
                    i += len(take)
                    self._not_empty.notify()
            elif overflow is Overflow.DROP_OLDEST:
                if self._closed:
                    return
                dq = self._dq
                for m in batch:
                    if len(dq) >= capacity:
                        dq.popleft()
                        self.dropped += 1
                    dq.append(m)
                self._not_empty.notify()
            else:  # Overflow.ERROR
                if self._closed:
                    return
                if len(self._dq) + len(batch) > capacity:
                    raise QueueOverflowError(
                        f"connection over capacity {capacity}")
                self._dq.extend(batch)
                self._not_empty.notify()

    def drain(self, timeout: float = 0.1) -> Optional[list[Message]]:
        """Take everything queued; [] on timeout, None once closed and empty."""
        with self._not_empty:
            if not self._dq:
                if self._closed:
                    return None
                self._not_empty.wait(timeout)
            if not self._dq:
                return None if self._closed else []
            out = list(self._dq)
            self._dq.clear()
            self.delivered += len(out)
            self._not_full.notify()
            return out

    def close(self) -> None:
        with self._lock:
            self._closed = True
            self._not_empty.notify_all()
            self._not_full.notify_all()


class SourceNode:
    """A named source bound into a pipeline, with its live-mode worker state."""

    def __init__(self, name: str, source: MessageSource, type_id: int,
                 stream_id: int):
        self.name = name
        self.source = source
        self.type_id = type_id
        self.stream_id = stream_id
        self.enabled = True
        self.cut_time: Optional[Timestamp] = None  # disable instant, if any
        self.connections: list[Connection] = []
        self.counters = _Counters()
        self.lock = threading.Lock()
        self.thread: Optional[threading.Thread] = None


class SinkNode:
    def __init__(self, sink: Sink):
        self.sink = sink
        self.threads: list[threading.Thread] = []


class Pipeline:
    """A set of sources wired to sinks through bounded connections."""

    def __init__(self, mode: PipelineMode, clock: Optional[Clock] = None,
                 epoch: Timestamp = Timestamp(0)):
        self.mode = mode
        if mode is PipelineMode.VIRTUAL:
            self.clock: Clock = clock or VirtualClock(epoch)
            if not isinstance(self.clock, VirtualClock):
                raise ConfigError("virtual pipelines need a virtual clock")
        else:
            self.clock = clock or LiveClock()
        self.state = PipelineState.CREATED
        self.fault: Optional[BaseException] = None
        self._sources: dict[str, SourceNode] = {}
        self._sinks: list[SinkNode] = []
        self._stop_event = threading.Event()
        self._state_lock = threading.Lock()
        self._commands: list[tuple[int, int, Callable[[], None]]] = []
        self._command_counter = 0
        self.poll_interval = 0.002

    @classmethod
    def virtual(cls, epoch: Timestamp = Timestamp(0)) -> "Pipeline":
        return cls(PipelineMode.VIRTUAL, epoch=epoch)

    @classmethod
    def live(cls) -> "Pipeline":
        return cls(PipelineMode.LIVE)

    # -- wiring (Created state only) -----------------------------------------

    def add_source(self, name: str, source: MessageSource, type_id: int,
                   stream_id: int) -> SourceNode:
        self._require_state(PipelineState.CREATED, "add_source")
        if name in self._sources:
            raise ConfigError(f"duplicate source name {name!r}")
        node = SourceNode(name, source, type_id, stream_id)
        self._sources[name] = node
        return node

    def add_sink(self, sink: Sink) -> SinkNode:
        self._require_state(PipelineState.CREATED, "add_sink")
        node = SinkNode(sink)
        self._sinks.append(node)
        return node

    def connect(self, source: SourceNode, sink: SinkNode,
                policy: Optional[DeliveryPolicy] = None) -> Connection:
        """Wire a source's emitter to a sink; pre-start only.

        The default policy preserves determinism in Virtual mode
        (BlockSource) and liveness in Live mode (DropOldest).
        """
        self._require_state(PipelineState.CREATED, "connect")
        if policy is None:
            policy = (DeliveryPolicy.block() if self.mode is PipelineMode.VIRTUAL
                      else DeliveryPolicy.drop_oldest())
        expected = getattr(sink.sink, "expected_type_id", None)
        if expected is not None and expected != source.type_id:
            raise ConfigError(
                f"type mismatch: source {source.name!r} emits type "
                f"{source.type_id}, sink expects {expected}")
        conn = Connection(policy)
        conn.sink_node = sink
        source.connections.append(conn)
        if self.mode is PipelineMode.LIVE:
            thread = threading.Thread(target=self._consume, args=(conn, sink),
                                      name=f"consume-{source.name}", daemon=True)
            sink.threads.append(thread)
        return conn

    # -- lifecycle ------------------------------------------------------------

    def _require_state(self, state: PipelineState, operation: str) -> None:
        if self.state is not state:
            raise PipelineStateError(
                f"{operation} requires state {state.value}, "
                f"pipeline is {self.state.value}")

    def start(self) -> None:
        self._require_state(PipelineState.CREATED, "start")
        self.state = PipelineState.RUNNING
        if self.mode is PipelineMode.LIVE:
            for sink_node in self._sinks:
                for thread in sink_node.threads:
                    thread.start()
            for node in self._sources.values():
                node.thread = threading.Thread(target=self._produce, args=(node,),
                                               name=f"source-{node.name}",
                                               daemon=True)
                node.thread.start()

    def stop(self) -> None:
        """Drain queues, flush and close sinks, transition to Stopped."""
        with self._state_lock:
            if self.state not in (PipelineState.RUNNING, PipelineState.STOPPING):
                raise PipelineStateError(
                    f"stop requires a running pipeline, state is {self.state.value}")
            self.state = PipelineState.STOPPING
        self._stop_event.set()
        if self.mode is PipelineMode.LIVE:
            for node in self._sources.values():
                if node.thread is not None:
                    node.thread.join()
            for node in self._sources.values():
                for conn in node.connections:
                    conn.close()
            for sink_node in self._sinks:
                for thread in sink_node.threads:
                    thread.join()
        for sink_node in self._sinks:
            sink_node.sink.close()
        self.state = PipelineState.STOPPED

    def _record_fault(self, exc: BaseException) -> None:
        if self.fault is None:
            self.fault = exc
        with self._state_lock:
            if self.state is PipelineState.RUNNING:
                self.state = PipelineState.STOPPING
        self._stop_event.set()

    # -- source control --------------------------------------------------------

    def source(self, name: str) -> SourceNode:
        try:
            return self._sources[name]
        except KeyError:
            raise UnknownStreamError(name) from None

    def set_source_enabled(self, name: str, enabled: bool) -> bool:
        """Toggle a source; returns the new state. Idempotent.

        Disabling cuts emission at the command's timestamp: no message with
        originating_time at or after the instant is produced. Re-enabling
        resumes at the instant with sequence numbering intact.
        """
        node = self.source(name)
        with node.lock:
            if node.enabled == enabled:
                return enabled
            instant = self.clock.now()
            if enabled:
                node.source.skip_to(instant)
                node.cut_time = None
            else:
                node.cut_time = instant
            node.enabled = enabled
            return enabled

    # -- virtual execution ------------------------------------------------------

    def schedule(self, at: Timestamp, command: Callable[[], None]) -> None:
        """Queue a control command at a virtual instant; commands run before
        any message with the same originating time is emitted."""
        if self.mode is not PipelineMode.VIRTUAL:
            raise PipelineStateError("schedule is a virtual-mode operation")
        self._commands.append((at.ticks, self._command_counter, command))
        self._command_counter += 1
        self._commands.sort()

    def run_until(self, t_end: Timestamp) -> int:
        """Deliver every event with originating_time < t_end, in
        (time, stream_id, sequence) order. Returns messages delivered."""
        if self.mode is not PipelineMode.VIRTUAL:
            raise PipelineStateError("run_until is a virtual-mode operation")
        self._require_state(PipelineState.RUNNING, "run_until")
        clock = self.clock
        delivered = 0
        while True:
            best: Optional[SourceNode] = None
            best_key = None
            for node in self._sources.values():
                if not node.enabled:
                    continue
                t = node.source.peek_next_time()
                if t >= t_end:
                    continue
                key = (t.ticks, node.stream_id)
                if best_key is None or key < best_key:
                    best = node
                    best_key = key
            next_tick = best_key[0] if best_key is not None else t_end.ticks
            ran_command = False
            while self._commands and self._commands[0][0] <= next_tick \
                    and self._commands[0][0] < t_end.ticks:
                at, _, command = self._commands.pop(0)
                if at > clock.now().ticks:
                    clock.advance_to(Timestamp(at))
                command()
                ran_command = True
            if ran_command:
                continue  # commands may have changed what is schedulable
            if best is None:
                break
            message = best.source.emit()
            if message.envelope.originating_time.ticks > clock.now().ticks:
                clock.advance_to(message.envelope.originating_time)
            best.counters.note_batch([message])
            # synchronous delivery: the scheduler is the only thread, so
            # queueing would only add latency without changing semantics
            for conn in best.connections:
                conn.delivered += 1
                conn.sink_node.sink.receive(message)
            delivered += 1
        if t_end > clock.now():
            clock.advance_to(t_end)
        return delivered

    # -- live workers -----------------------------------------------------------

    def _produce(self, node: SourceNode) -> None:
        stop = self._stop_event
        poll = self.poll_interval
        while True:
            stopping = stop.is_set()
            with node.lock:
                if node.enabled:
                    limit = self.clock.now()
                elif node.cut_time is not None:
                    limit = node.cut_time
                else:
                    limit = None
                batch = node.source.generate_until(limit) if limit else []
                if not node.enabled:
                    node.cut_time = None  # cut consumed; idle until re-enabled
            if batch:
                node.counters.note_batch(batch)
                try:
                    for conn in node.connections:
                        conn.put_batch(batch)
                except QueueOverflowError as exc:
                    self._record_fault(exc)
                    return
            if stopping:
                return
            if not batch:
                stop.wait(poll)

    def _consume(self, connection: Connection, sink_node: SinkNode) -> None:
        sink = sink_node.sink
        while True:
            batch = connection.drain(timeout=0.05)
            if batch is None:
                return
            for message in batch:
                sink.receive(message)

    # -- introspection ------------------------------------------------------------

    def stats(self) -> dict[str, dict[str, Any]]:
        out = {}
        for name, node in self._sources.items():
            counters = node.counters
            drops = sum(conn.dropped for conn in node.connections)
            out[name] = {
                "stream_id": node.stream_id,
                "enabled": node.enabled,
                "emitted": counters.emitted,
                "dropped": drops,
                "last_originating_time": counters.last_originating,
                "latency_sum_ticks": counters.latency_sum,
                "latency_max_ticks": counters.latency_max,
            }
        return out
