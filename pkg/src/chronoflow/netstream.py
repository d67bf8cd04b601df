"""Client-server session streaming over TCP.

Framing: every frame is length u32 (bytes after the length field) followed
by frame_type u8 and a type-specific little-endian body. Frames larger
than 16 MiB are a protocol error. The Data body is byte-identical to the
on-disk record body minus its record_length field, so one codec serves
disk and wire and a relayed session can be re-persisted bit-exactly.

Frame types:
  0 Hello          protocol_version u16 | session_id 16B
  1 StreamDirectory count u16 | per stream: id u32 | type_id u16 |
                   name_len u16 | name utf8 | rate_num u64 | rate_den u64
  2 Subscribe      count u16 | per stream: name_len u16 | name utf8
  3 ClockSyncReq   t0 i64
  4 ClockSyncResp  t0 i64 (echo) | t1 i64 (receive) | t2 i64 (send)
  5 Data           stream_id u32 | sequence u64 | originating i64 |
                   creation i64 | payload_length u32 | payload | crc32c u32
  6 Bye            dropped u64
  7 Error          code u16 | message_len u16 | message utf8

Error codes: 1 version mismatch, 2 malformed frame, 3 unknown stream.
"""

from __future__ import annotations

import socket
import struct
import threading
from collections import deque
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterator, Optional, Union

from chronoflow.checksum import crc32c
from chronoflow.errors import ProtocolError, StoreIntegrityError
from chronoflow.messages import Envelope, Message, StreamMetadata
from chronoflow.rng import Xoshiro256StarStar
from chronoflow.store import StoreReader
from chronoflow.timebase import (
    Clock,
    ClockSyncSample,
    Duration,
    LiveClock,
    OffsetEstimate,
    Timestamp,
    estimate_offset,
)

PROTOCOL_VERSION = 1
DEFAULT_PORT = 46801
MAX_FRAME_BYTES = 16 * 1024 * 1024

FT_HELLO = 0
FT_DIRECTORY = 1
FT_SUBSCRIBE = 2
FT_SYNC_REQ = 3
FT_SYNC_RESP = 4
FT_DATA = 5
FT_BYE = 6
FT_ERROR = 7

ERR_VERSION = 1
ERR_MALFORMED = 2
ERR_UNKNOWN_STREAM = 3

_LEN = struct.Struct("<I")
_HELLO = struct.Struct("<H16s")
_DIR_STREAM = struct.Struct("<IHH")  # id, type_id, name_len (then name, rates)
_RATE = struct.Struct("<QQ")
_DATA_HEAD = struct.Struct("<IQqqI")
_CRC = struct.Struct("<I")
_SYNC_REQ = struct.Struct("<q")
_SYNC_RESP = struct.Struct("<qqq")
_BYE = struct.Struct("<Q")
_ERROR_HEAD = struct.Struct("<HH")


def encode_data_body(envelope: Envelope, payload: bytes) -> bytes:
    return (_DATA_HEAD.pack(envelope.stream_id, envelope.sequence,
                            envelope.originating_time.ticks,
                            envelope.creation_time.ticks, len(payload))
            + payload + _CRC.pack(crc32c(payload)))


def decode_data_body(body: bytes) -> tuple[Envelope, bytes]:
    if len(body) < _DATA_HEAD.size + _CRC.size:
        raise ProtocolError("data frame too short", ERR_MALFORMED)
    stream_id, seq, orig, creat, payload_len = _DATA_HEAD.unpack_from(body, 0)
    expected = _DATA_HEAD.size + payload_len + _CRC.size
    if len(body) != expected:
        raise ProtocolError(
            f"data frame length {len(body)} != {expected}", ERR_MALFORMED)
    payload = body[_DATA_HEAD.size:_DATA_HEAD.size + payload_len]
    (stored_crc,) = _CRC.unpack_from(body, _DATA_HEAD.size + payload_len)
    if crc32c(payload) != stored_crc:
        raise StoreIntegrityError(
            f"payload checksum mismatch on the wire (stream {stream_id}, "
            f"sequence {seq})", stream_id=stream_id, sequence=seq)
    return Envelope(stream_id, seq, Timestamp(orig), Timestamp(creat)), payload


def _encode_directory(streams: list[StreamMetadata]) -> bytes:
    parts = [struct.pack("<H", len(streams))]
    for s in streams:
        name = s.name.encode("utf-8")
        parts.append(_DIR_STREAM.pack(s.stream_id, s.type_id, len(name)))
        parts.append(name)
        parts.append(_RATE.pack(s.nominal_rate_hz.numerator,
                                s.nominal_rate_hz.denominator))
    return b"".join(parts)


def _decode_directory(body: bytes) -> list[StreamMetadata]:
    try:
        (count,) = struct.unpack_from("<H", body, 0)
        offset = 2
        out = []
        for _ in range(count):
            sid, type_id, name_len = _DIR_STREAM.unpack_from(body, offset)
            offset += _DIR_STREAM.size
            name = body[offset:offset + name_len].decode("utf-8")
            offset += name_len
            num, den = _RATE.unpack_from(body, offset)
            offset += _RATE.size
            out.append(StreamMetadata(sid, name, type_id, Fraction(num, den)))
        return out
    except (struct.error, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed directory: {exc}", ERR_MALFORMED) from exc


def _encode_subscribe(names: list[str]) -> bytes:
    parts = [struct.pack("<H", len(names))]
    for n in names:
        raw = n.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def _decode_subscribe(body: bytes) -> list[str]:
    try:
        (count,) = struct.unpack_from("<H", body, 0)
        offset = 2
        names = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            names.append(body[offset:offset + name_len].decode("utf-8"))
            offset += name_len
        return names
    except (struct.error, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed subscribe: {exc}", ERR_MALFORMED) from exc


class _FrameSocket:
    """Length-prefixed frame transport over one TCP socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._send_lock = threading.Lock()
        self._recv_buffer = b""

    def send_frame(self, frame_type: int, body: bytes) -> None:
        header = _LEN.pack(1 + len(body)) + bytes([frame_type])
        with self._send_lock:
            self._sock.sendall(header)
            self._sock.sendall(body)

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            chunk = self._sock.recv(min(remaining, 1 << 20))
            if not chunk:
                raise ConnectionError("peer closed the connection")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def recv_frame(self) -> tuple[int, bytes]:
        (length,) = _LEN.unpack(self._recv_exact(4))
        if length < 1:
            raise ProtocolError("zero-length frame", ERR_MALFORMED)
        if length > MAX_FRAME_BYTES:
            raise ProtocolError(f"frame of {length} bytes exceeds the "
                                f"{MAX_FRAME_BYTES} cap", ERR_MALFORMED)
        payload = self._recv_exact(length)
        return payload[0], payload[1:]

    def settimeout(self, timeout: Optional[float]) -> None:
        self._sock.settimeout(timeout)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class _Subscription:
    """Per-connection outbound queue for live taps (DropOldest)."""

    def __init__(self, stream_ids: set[int], capacity: int = 4096):
        self.stream_ids = stream_ids
        self.capacity = capacity
        self.dq: deque[tuple[Envelope, bytes]] = deque()
        self.lock = threading.Lock()
        self.ready = threading.Condition(self.lock)
        self.dropped = 0
        self.closed = False

    def offer(self, envelope: Envelope, payload: bytes) -> None:
        if envelope.stream_id not in self.stream_ids:
            return
        with self.lock:
            if self.closed:
                return
            if len(self.dq) >= self.capacity:
                self.dq.popleft()
                self.dropped += 1
            self.dq.append((envelope, payload))
            self.ready.notify()

    def take(self, timeout: float = 0.1) -> Optional[list[tuple[Envelope, bytes]]]:
        with self.ready:
            if not self.dq and not self.closed:
                self.ready.wait(timeout)
            if self.dq:
                out = list(self.dq)
                self.dq.clear()
                return out
            return None if self.closed else []

    def close(self) -> None:
        with self.lock:
            self.closed = True
            self.ready.notify_all()


class LiveTap:
    """Pipeline sink that fans captured messages out to network subscribers."""

    def __init__(self):
        self._subs: list[_Subscription] = []
        self._lock = threading.Lock()

    def receive(self, message: Message) -> None:
        payload = message.payload
        if not isinstance(payload, (bytes, bytearray, memoryview)):
            from chronoflow.codecs import encode_payload
            payload = encode_payload(payload)
        with self._lock:
            subs = list(self._subs)
        for sub in subs:
            sub.offer(message.envelope, bytes(payload))

    def attach(self, sub: _Subscription) -> None:
        with self._lock:
            self._subs.append(sub)

    def detach(self, sub: _Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def close(self) -> None:
        with self._lock:
            subs = list(self._subs)
            self._subs.clear()
        for sub in subs:
            sub.close()


class StreamServer:
    """Serves a session (stored or live) to any number of subscribers.

    Per connection: expect Hello, answer Hello + StreamDirectory, then
    stream Data frames for subscribed streams in order. ClockSyncReq is
    answered immediately with receive/send stamps from the server clock.
    """

    def __init__(self, directory: list[StreamMetadata], session_id: bytes,
                 host: str = "127.0.0.1", port: int = 0,
                 clock: Optional[Clock] = None,
                 store_path: Optional[Union[str, Path]] = None,
                 tap: Optional[LiveTap] = None):
        if store_path is None and tap is None:
            raise ValueError("server needs a store path or a live tap")
        self.directory = directory
        self.session_id = session_id
        self.clock = clock or LiveClock()
        self._store_path = Path(store_path) if store_path else None
        self._tap = tap
        self._by_name = {s.name: s for s in directory}
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)
        self.host, self.port = self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._conns: list[_FrameSocket] = []
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               name="netstream-accept",
                                               daemon=True)

    @classmethod
    def for_store(cls, store_path: Union[str, Path], host: str = "127.0.0.1",
                  port: int = 0, clock: Optional[Clock] = None) -> "StreamServer":
        with StoreReader(store_path) as reader:
            directory = list(reader.streams)
            session_id = reader.session_id
        return cls(directory, session_id, host=host, port=port, clock=clock,
                   store_path=store_path)

    def start(self) -> "StreamServer":
        self._accept_thread.start()
        return self

    def close(self) -> None:
        self._stop.set()
        self._listener.close()
        for fs in self._conns:
            fs.close()
        for t in self._threads:
            t.join(timeout=2)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            fs = _FrameSocket(sock)
            self._conns.append(fs)
            thread = threading.Thread(target=self._handle, args=(fs,),
                                      name="netstream-conn", daemon=True)
            thread.start()
            self._threads.append(thread)

    def _abort(self, fs: _FrameSocket, code: int, message: str) -> None:
        raw = message.encode("utf-8")
        try:
            fs.send_frame(FT_ERROR, _ERROR_HEAD.pack(code, len(raw)) + raw)
        except OSError:
            pass
        fs.close()

    def _handle(self, fs: _FrameSocket) -> None:
        try:
            frame_type, body = fs.recv_frame()
            if frame_type != FT_HELLO or len(body) != _HELLO.size:
                self._abort(fs, ERR_MALFORMED, "expected Hello")
                return
            version, _client_sid = _HELLO.unpack(body)
            if version != PROTOCOL_VERSION:
                self._abort(fs, ERR_VERSION,
                            f"protocol version {version} unsupported")
                return
            fs.send_frame(FT_HELLO, _HELLO.pack(PROTOCOL_VERSION, self.session_id))
            fs.send_frame(FT_DIRECTORY, _encode_directory(self.directory))
            self._serve_connection(fs)
        except (ProtocolError, ConnectionError, OSError, struct.error) as exc:
            if isinstance(exc, ProtocolError):
                self._abort(fs, exc.code, str(exc))
            else:
                fs.close()

    def _serve_connection(self, fs: _FrameSocket) -> None:
        pump: Optional[threading.Thread] = None
        sub: Optional[_Subscription] = None
        while not self._stop.is_set():
            frame_type, body = fs.recv_frame()
            if frame_type == FT_SYNC_REQ:
                t1 = self.clock.now()
                if len(body) != _SYNC_REQ.size:
                    raise ProtocolError("bad sync request", ERR_MALFORMED)
                (t0,) = _SYNC_REQ.unpack(body)
                t2 = self.clock.now()
                fs.send_frame(FT_SYNC_RESP, _SYNC_RESP.pack(t0, t1.ticks, t2.ticks))
            elif frame_type == FT_SUBSCRIBE:
                if pump is not None:
                    raise ProtocolError("already subscribed", ERR_MALFORMED)
                names = _decode_subscribe(body)
                unknown = [n for n in names if n not in self._by_name]
                if unknown:
                    self._abort(fs, ERR_UNKNOWN_STREAM,
                                f"unknown stream {unknown[0]!r}")
                    return
                ids = {self._by_name[n].stream_id for n in names}
                if self._store_path is not None:
                    pump = threading.Thread(target=self._pump_store,
                                            args=(fs, ids), daemon=True)
                else:
                    sub = _Subscription(ids)
                    self._tap.attach(sub)
                    pump = threading.Thread(target=self._pump_tap,
                                            args=(fs, sub), daemon=True)
                pump.start()
            elif frame_type == FT_BYE:
                break
            else:
                raise ProtocolError(f"unexpected frame type {frame_type}",
                                    ERR_MALFORMED)
        if sub is not None:
            sub.close()
            self._tap.detach(sub)
        if pump is not None:
            pump.join(timeout=5)
        fs.close()

    def _pump_store(self, fs: _FrameSocket, stream_ids: set[int]) -> None:
        try:
            with StoreReader(self._store_path) as reader:
                for message in reader.read_merged(streams=stream_ids):
                    if self._stop.is_set():
                        return
                    fs.send_frame(FT_DATA, encode_data_body(message.envelope,
                                                            message.payload))
            fs.send_frame(FT_BYE, _BYE.pack(0))
        except OSError:
            pass

    def _pump_tap(self, fs: _FrameSocket, sub: _Subscription) -> None:
        try:
            while True:
                batch = sub.take(timeout=0.1)
                if batch is None:
                    break
                for envelope, payload in batch:
                    fs.send_frame(FT_DATA, encode_data_body(envelope, payload))
            fs.send_frame(FT_BYE, _BYE.pack(sub.dropped))
        except OSError:
            pass


class StreamClient:
    """Subscribes to a server and yields decoded, order-checked messages."""

    def __init__(self, host: str, port: int = DEFAULT_PORT,
                 clock: Optional[Clock] = None, timeout: float = 5.0):
        self.host = host
        self.port = port
        self.clock = clock or LiveClock()
        self.timeout = timeout
        self._fs: Optional[_FrameSocket] = None
        self.session_id: Optional[bytes] = None
        self.directory: list[StreamMetadata] = []
        self.rebase_offset: Optional[Duration] = None
        self.bye_drop_count: Optional[int] = None

    def connect(self) -> "StreamClient":
        sock = socket.create_connection((self.host, self.port),
                                        timeout=self.timeout)
        self._fs = _FrameSocket(sock)
        self._fs.send_frame(FT_HELLO, _HELLO.pack(PROTOCOL_VERSION, b"\x00" * 16))
        frame_type, body = self._expect_frame()
        if frame_type != FT_HELLO:
            raise ProtocolError(f"expected Hello, got type {frame_type}",
                                ERR_MALFORMED)
        _version, self.session_id = _HELLO.unpack(body)
        frame_type, body = self._expect_frame()
        if frame_type != FT_DIRECTORY:
            raise ProtocolError(f"expected StreamDirectory, got {frame_type}",
                                ERR_MALFORMED)
        self.directory = _decode_directory(body)
        return self

    def __enter__(self):
        return self.connect()

    def __exit__(self, *exc):
        self.close()

    def _expect_frame(self) -> tuple[int, bytes]:
        assert self._fs is not None
        frame_type, body = self._fs.recv_frame()
        if frame_type == FT_ERROR:
            code, msg_len = _ERROR_HEAD.unpack_from(body, 0)
            message = body[_ERROR_HEAD.size:_ERROR_HEAD.size + msg_len].decode(
                "utf-8", errors="replace")
            raise ProtocolError(f"server error {code}: {message}", code)
        return frame_type, body

    def sync_clocks(self, exchanges: int = 8,
                    timeout: float = 1.0) -> OffsetEstimate:
        """Run ClockSyncReq/Resp exchanges and estimate the server offset.

        Individual exchange timeouts shrink the sample set; an empty set is
        an error.
        """
        assert self._fs is not None, "connect first"
        samples = []
        self._fs.settimeout(timeout)
        try:
            for _ in range(exchanges):
                t0 = self.clock.now()
                self._fs.send_frame(FT_SYNC_REQ, _SYNC_REQ.pack(t0.ticks))
                try:
                    frame_type, body = self._expect_frame()
                except socket.timeout:
                    continue
                t3 = self.clock.now()
                if frame_type != FT_SYNC_RESP or len(body) != _SYNC_RESP.size:
                    raise ProtocolError("bad sync response", ERR_MALFORMED)
                t0_echo, t1, t2 = _SYNC_RESP.unpack(body)
                if t0_echo != t0.ticks:
                    continue  # stale response from a timed-out exchange
                samples.append(ClockSyncSample(t0, Timestamp(t1), Timestamp(t2), t3))
        finally:
            self._fs.settimeout(self.timeout)
        return estimate_offset(samples)

    def subscribe(self, names: list[str],
                  rebase_offset: Optional[Duration] = None) -> None:
        """Ask for streams by name; rebase_offset, when given, is added to
        both message timestamps as they are yielded (opt-in, never silent)."""
        assert self._fs is not None, "connect first"
        self.rebase_offset = rebase_offset
        self._fs.send_frame(FT_SUBSCRIBE, _encode_subscribe(names))

    def messages(self) -> Iterator[Message]:
        """Yield Data frames until the server's Bye; CRC and per-stream
        order are verified on every message."""
        assert self._fs is not None, "connect first"
        last_per_stream: dict[int, int] = {}
        offset = self.rebase_offset
        while True:
            frame_type, body = self._expect_frame()
            if frame_type == FT_BYE:
                (self.bye_drop_count,) = _BYE.unpack(body)
                return
            if frame_type != FT_DATA:
                raise ProtocolError(f"unexpected frame type {frame_type} "
                                    f"during streaming", ERR_MALFORMED)
            envelope, payload = decode_data_body(body)
            last = last_per_stream.get(envelope.stream_id)
            if last is not None and envelope.originating_time.ticks <= last:
                raise ProtocolError(
                    f"stream {envelope.stream_id} originating_time went "
                    f"backwards", ERR_MALFORMED)
            last_per_stream[envelope.stream_id] = envelope.originating_time.ticks
            if offset is not None:
                envelope = Envelope(envelope.stream_id, envelope.sequence,
                                    envelope.originating_time + offset,
                                    envelope.creation_time + offset)
            yield Message(envelope, payload)

    def bye(self) -> None:
        if self._fs is not None:
            try:
                self._fs.send_frame(FT_BYE, _BYE.pack(0))
            except OSError:
                pass

    def close(self) -> None:
        if self._fs is not None:
            self._fs.close()
            self._fs = None


class SimulatedLink:
    """In-process clock-sync link with known ground truth.

    Models a server whose clock leads the client's by `offset`, reachable
    with the given one-way latencies plus optional uniform jitter. Pure
    arithmetic: no sockets, no sleeping.
    """

    def __init__(self, offset: Duration, latency_up: Duration,
                 latency_down: Duration, jitter_us: int = 0, seed: int = 0,
                 processing: Duration = Duration(10)):
        self.offset = offset
        self.latency_up = latency_up
        self.latency_down = latency_down
        self.jitter_ticks = jitter_us * 10
        self.processing = processing
        self._rng = Xoshiro256StarStar(seed)
        self._now = 0

    def _jitter(self) -> int:
        if not self.jitter_ticks:
            return 0
        return self._rng.randint(0, self.jitter_ticks)

    def exchange(self) -> ClockSyncSample:
        t0 = self._now
        t1 = t0 + self.latency_up.ticks + self._jitter() + self.offset.ticks
        t2 = t1 + self.processing.ticks
        t3 = (t2 - self.offset.ticks) + self.latency_down.ticks + self._jitter()
        self._now = t3 + 1_000  # small gap before the next exchange
        return ClockSyncSample(Timestamp(t0), Timestamp(t1), Timestamp(t2),
                               Timestamp(t3))

    def sample_exchanges(self, n: int) -> list[ClockSyncSample]:
        return [self.exchange() for _ in range(n)]
