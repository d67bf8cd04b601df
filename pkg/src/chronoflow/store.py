"""Deterministic on-disk session store: catalog + index + data files.

One captured session is a directory holding three files:

  session.dat   framed records, append-only
  session.idx   one fixed-size seek entry per record
  catalog.json  stream directory and tallies; written last, so its
                presence is the session's commit marker

Byte layouts (all little-endian):

  data header   magic "PSUD" | format_version u16 | flags u16 | session_id 16B
  index header  magic "PSUI" | format_version u16 | flags u16 | session_id 16B
  record        record_length u32 (bytes after this field) | stream_id u32 |
                sequence u64 | originating_time i64 | creation_time i64 |
                payload_length u32 | payload | crc32c u32 (over payload)
  index entry   stream_id u32 | sequence u64 | originating_time i64 | offset u64

The data and index files contain no wall-clock state, so identical
capture runs produce identical bytes; the only nondeterministic field
(created_utc) lives in the catalog.
"""

from __future__ import annotations

import hashlib
import json
import mmap
import os
import struct
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Optional, Union

import numpy as np

from chronoflow.checksum import crc32c
from chronoflow.errors import (
    StoreError,
    StoreIntegrityError,
    StoreStateError,
    UnfinalizedStoreError,
    UnknownStreamError,
)
from chronoflow.messages import (
    Envelope,
    EnvelopeSummary,
    Message,
    StreamMetadata,
    validate_envelope,
)
from chronoflow.timebase import Duration, Timestamp

DATA_MAGIC = b"PSUD"
INDEX_MAGIC = b"PSUI"
FORMAT_VERSION = 1

DATA_FILE = "session.dat"
INDEX_FILE = "session.idx"
CATALOG_FILE = "catalog.json"

_FILE_HEADER = struct.Struct("<4sHH16s")  # magic, version, flags, session_id
_RECORD_HEAD = struct.Struct("<IIQqqI")
_INDEX_ENTRY = struct.Struct("<IQqQ")
_CRC = struct.Struct("<I")

FILE_HEADER_SIZE = _FILE_HEADER.size          # 24
RECORD_HEAD_SIZE = _RECORD_HEAD.size          # 36, includes the length field
RECORD_OVERHEAD = RECORD_HEAD_SIZE + _CRC.size
INDEX_ENTRY_SIZE = _INDEX_ENTRY.size          # 28

_INDEX_DTYPE = np.dtype([("stream", "<u4"), ("seq", "<u8"),
                         ("orig", "<i8"), ("offset", "<u8")])

#: Replay without pacing: deliver as fast as the sink accepts.
MAX_SPEED = None


class EnvelopeRejected(StoreError):
    """The writer refused an envelope that breaks its stream's discipline."""

    def __init__(self, violation, envelope: Envelope):
        super().__init__(f"{violation.value} (stream {envelope.stream_id}, "
                         f"sequence {envelope.sequence})")
        self.violation = violation
        self.envelope = envelope


def derive_session_id(session_name: str, streams: Iterable[StreamMetadata]) -> bytes:
    """Deterministic 16-byte session identity from name + stream registry.

    Wall-clock identity would make otherwise-identical capture runs
    differ, so identity is content-derived instead.
    """
    h = hashlib.sha256()
    h.update(b"chronoflow-session-v1\x00")
    h.update(session_name.encode("utf-8"))
    for s in streams:
        h.update(f"\x00{s.stream_id}:{s.name}:{s.type_id}:{s.nominal_rate_hz}"
                 .encode("utf-8"))
    return h.digest()[:16]


class _StreamState:
    __slots__ = ("meta", "count", "last", "first_orig", "last_orig")

    def __init__(self, meta: StreamMetadata):
        self.meta = meta
        self.count = 0
        self.last: Optional[EnvelopeSummary] = None
        self.first_orig: Optional[int] = None
        self.last_orig: Optional[int] = None


class StoreWriter:
    """Exclusive writer for one session directory."""

    def __init__(self, path: Union[str, Path], session_name: str,
                 streams: Iterable[StreamMetadata], *,
                 session_id: Optional[bytes] = None,
                 metadata: Optional[dict[str, Any]] = None):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        if (self.path / DATA_FILE).exists():
            raise StoreStateError(f"{self.path} already contains a session")
        self.session_name = session_name
        self._streams: dict[int, _StreamState] = {}
        self._order: list[int] = []
        for meta in streams:
            if meta.stream_id in self._streams:
                raise StoreStateError(f"duplicate stream id {meta.stream_id}")
            self._streams[meta.stream_id] = _StreamState(meta)
            self._order.append(meta.stream_id)
        if session_id is None:
            session_id = derive_session_id(
                session_name, [self._streams[i].meta for i in self._order])
        if len(session_id) != 16:
            raise StoreStateError("session_id must be exactly 16 bytes")
        self.session_id = session_id
        self._metadata = dict(metadata) if metadata else None
        header = _FILE_HEADER.pack(DATA_MAGIC, FORMAT_VERSION, 0, session_id)
        self._data = open(self.path / DATA_FILE, "wb", buffering=1 << 20)
        self._index = open(self.path / INDEX_FILE, "wb", buffering=1 << 20)
        self._data.write(header)
        self._index.write(_FILE_HEADER.pack(INDEX_MAGIC, FORMAT_VERSION, 0, session_id))
        self._offset = FILE_HEADER_SIZE
        self._poisoned = False
        self._finalized = False

    @property
    def message_count(self) -> int:
        return sum(s.count for s in self._streams.values())

    def stream_count(self, stream_id: int) -> int:
        return self._streams[stream_id].count

    def write(self, envelope: Envelope, payload: bytes) -> int:
        """Append one record + index entry; returns the record's byte offset."""
        if self._finalized:
            raise StoreStateError("writer already finalized")
        if self._poisoned:
            raise StoreStateError("writer poisoned by an earlier I/O failure")
        state = self._streams.get(envelope.stream_id)
        if state is None:
            raise UnknownStreamError(f"id {envelope.stream_id}")
        violation = validate_envelope(envelope, state.last)
        if violation is not None:
            raise EnvelopeRejected(violation, envelope)

        offset = self._offset
        orig = envelope.originating_time.ticks
        head = _RECORD_HEAD.pack(RECORD_HEAD_SIZE + len(payload),
                                 envelope.stream_id, envelope.sequence,
                                 orig, envelope.creation_time.ticks, len(payload))
        try:
            self._data.write(head)
            self._data.write(payload)
            self._data.write(_CRC.pack(crc32c(payload)))
            self._index.write(_INDEX_ENTRY.pack(envelope.stream_id,
                                                envelope.sequence, orig, offset))
        except OSError as exc:
            self._poisoned = True
            raise StoreError(f"I/O failure while appending: {exc}") from exc
        self._offset = offset + RECORD_OVERHEAD + len(payload)
        state.count += 1
        state.last = EnvelopeSummary(envelope.sequence, envelope.originating_time)
        if state.first_orig is None:
            state.first_orig = orig
        state.last_orig = orig
        return offset

    def write_message(self, message: Message, payload_bytes: bytes) -> int:
        return self.write(message.envelope, payload_bytes)

    def finalize(self) -> dict[str, Any]:
        """Flush and fsync data/index, then write the catalog commit marker."""
        if self._finalized:
            raise StoreStateError("finalize called twice")
        if self._poisoned:
            raise StoreStateError("writer poisoned by an earlier I/O failure")
        try:
            for f in (self._data, self._index):
                f.flush()
                os.fsync(f.fileno())
                f.close()
            catalog = self._build_catalog()
            tmp = self.path / (CATALOG_FILE + ".tmp")
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump(catalog, f, indent=2)
                f.write("\n")
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, self.path / CATALOG_FILE)
        except OSError as exc:
            self._poisoned = True
            raise StoreError(f"I/O failure while finalizing: {exc}") from exc
        self._finalized = True
        return catalog

    def abort(self) -> None:
        """Close files without writing a catalog; the session stays unfinalized."""
        for f in (self._data, self._index):
            try:
                f.close()
            except OSError:
                pass
        self._poisoned = True

    def _build_catalog(self) -> dict[str, Any]:
        streams = []
        for sid in self._order:
            state = self._streams[sid]
            streams.append({
                "id": state.meta.stream_id,
                "name": state.meta.name,
                "type_id": int(state.meta.type_id),
                "nominal_rate_hz": str(state.meta.nominal_rate_hz),
                "message_count": state.count,
                "first_originating_time": state.first_orig,
                "last_originating_time": state.last_orig,
            })
        catalog: dict[str, Any] = {
            "format_version": FORMAT_VERSION,
            "session_name": self.session_name,
            "session_id": self.session_id.hex(),
            "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "streams": streams,
        }
        if self._metadata:
            catalog["metadata"] = self._metadata
        return catalog


def _parse_file_header(buf: bytes, expected_magic: bytes, what: str) -> bytes:
    if len(buf) < FILE_HEADER_SIZE:
        raise StoreIntegrityError(f"{what} shorter than its header")
    magic, version, _flags, session_id = _FILE_HEADER.unpack_from(buf, 0)
    if magic != expected_magic:
        raise StoreIntegrityError(f"{what} has bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise StoreIntegrityError(f"{what} format version {version} unsupported")
    return session_id


class StoreReader:
    """Read-only view of a finalized session; safe for concurrent readers."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        catalog_path = self.path / CATALOG_FILE
        if not catalog_path.exists():
            raise UnfinalizedStoreError(
                f"{self.path} has no catalog; session was never finalized")
        with open(catalog_path, encoding="utf-8") as f:
            self.catalog = json.load(f)
        self._data_f = open(self.path / DATA_FILE, "rb")
        self._index_f = open(self.path / INDEX_FILE, "rb")
        self._data = mmap.mmap(self._data_f.fileno(), 0, access=mmap.ACCESS_READ)
        self._index = mmap.mmap(self._index_f.fileno(), 0, access=mmap.ACCESS_READ)
        data_sid = _parse_file_header(self._data, DATA_MAGIC, "data file")
        index_sid = _parse_file_header(self._index, INDEX_MAGIC, "index file")
        if data_sid != index_sid:
            raise StoreIntegrityError("data and index session ids differ")
        if data_sid.hex() != self.catalog.get("session_id"):
            raise StoreIntegrityError("catalog session id does not match files")
        self.session_id = data_sid
        if (len(self._index) - FILE_HEADER_SIZE) % INDEX_ENTRY_SIZE:
            raise StoreIntegrityError("index file length is not a whole "
                                      "number of entries")
        self.streams = [self._meta_from_catalog(s) for s in self.catalog["streams"]]
        self._by_name = {s.name: s for s in self.streams}

    @staticmethod
    def _meta_from_catalog(entry: dict[str, Any]) -> StreamMetadata:
        return StreamMetadata(stream_id=entry["id"], name=entry["name"],
                              type_id=entry["type_id"],
                              nominal_rate_hz=Fraction(entry["nominal_rate_hz"]))

    def close(self) -> None:
        for m in (self._data, self._index):
            m.close()
        for f in (self._data_f, self._index_f):
            f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def message_count(self) -> int:
        return sum(s["message_count"] for s in self.catalog["streams"])

    def stream_ids(self, streams: Optional[Iterable[Union[str, int]]]) -> Optional[set[int]]:
        if streams is None:
            return None
        ids = set()
        for s in streams:
            if isinstance(s, int):
                ids.add(s)
            else:
                meta = self._by_name.get(s)
                if meta is None:
                    raise UnknownStreamError(s)
                ids.add(meta.stream_id)
        return ids

    def index_entries(self) -> np.ndarray:
        """All index entries in arrival order, as a structured array.

        Copied out of the mmap so callers can outlive the reader.
        """
        return np.frombuffer(self._index, dtype=_INDEX_DTYPE,
                             offset=FILE_HEADER_SIZE).copy()

    def _record_at(self, offset: int, expect: Optional[tuple[int, int]] = None
                   ) -> tuple[Envelope, bytes]:
        data = self._data
        if offset + RECORD_HEAD_SIZE > len(data):
            raise StoreIntegrityError(
                f"record header at offset {offset} extends past end of data file")
        (rec_len, stream_id, seq, orig, creat,
         payload_len) = _RECORD_HEAD.unpack_from(data, offset)
        if rec_len != RECORD_HEAD_SIZE + payload_len:
            raise StoreIntegrityError(
                f"record length field inconsistent at offset {offset}",
                stream_id=stream_id, sequence=seq)
        end = offset + RECORD_OVERHEAD + payload_len
        if end > len(data):
            raise StoreIntegrityError(
                f"record at offset {offset} truncated",
                stream_id=stream_id, sequence=seq)
        if expect is not None and (stream_id, seq) != expect:
            raise StoreIntegrityError(
                f"index entry does not match record at offset {offset}",
                stream_id=stream_id, sequence=seq)
        payload = data[offset + RECORD_HEAD_SIZE:end - _CRC.size]
        (stored_crc,) = _CRC.unpack_from(data, end - _CRC.size)
        if crc32c(payload) != stored_crc:
            raise StoreIntegrityError(
                f"payload checksum mismatch (stream {stream_id}, sequence {seq})",
                stream_id=stream_id, sequence=seq)
        env = Envelope(stream_id, seq, Timestamp(orig), Timestamp(creat))
        return env, payload

    def read_merged(self, streams: Optional[Iterable[Union[str, int]]] = None,
                    time_range: Optional[tuple[Timestamp, Timestamp]] = None,
                    ) -> Iterator[Message]:
        """Yield messages sorted by (originating_time, stream_id, sequence).

        The filter and the half-open [start, end) range apply to
        originating_time. Payload checksums are verified lazily as each
        record is reached.
        """
        entries = self.index_entries()
        if len(entries):
            mask = None
            ids = self.stream_ids(streams)
            if ids is not None:
                mask = np.isin(entries["stream"], list(ids))
            if time_range is not None:
                t_mask = ((entries["orig"] >= time_range[0].ticks)
                          & (entries["orig"] < time_range[1].ticks))
                mask = t_mask if mask is None else (mask & t_mask)
            if mask is not None:
                entries = entries[mask]
        if len(entries) == 0:
            return
        order = np.lexsort((entries["seq"], entries["stream"], entries["orig"]))
        offsets = entries["offset"]
        stream_col = entries["stream"]
        seq_col = entries["seq"]
        record_at = self._record_at
        for i in order:
            env, payload = record_at(int(offsets[i]),
                                     expect=(int(stream_col[i]), int(seq_col[i])))
            yield Message(env, payload)

    def scan_headers(self) -> Iterator[tuple[Envelope, int, int]]:
        """Walk records in arrival order without touching payload bytes.

        Yields (envelope, payload_length, offset); used by inspection
        tooling where decoding megapixel blobs would be waste.
        """
        data = self._data
        offset = FILE_HEADER_SIZE
        size = len(data)
        while offset < size:
            if offset + RECORD_HEAD_SIZE > size:
                raise StoreIntegrityError(
                    f"record header at offset {offset} extends past end of data file")
            (rec_len, stream_id, seq, orig, creat,
             payload_len) = _RECORD_HEAD.unpack_from(data, offset)
            if rec_len != RECORD_HEAD_SIZE + payload_len:
                raise StoreIntegrityError(
                    f"record length field inconsistent at offset {offset}",
                    stream_id=stream_id, sequence=seq)
            if offset + RECORD_OVERHEAD + payload_len > size:
                raise StoreIntegrityError(
                    f"record at offset {offset} truncated",
                    stream_id=stream_id, sequence=seq)
            yield (Envelope(stream_id, seq, Timestamp(orig), Timestamp(creat)),
                   payload_len, offset)
            offset += RECORD_OVERHEAD + payload_len

    def verify_index(self) -> int:
        """Exhaustively check every index entry against its record.

        Returns the number of entries checked; raises StoreIntegrityError
        on the first inconsistency.
        """
        entries = self.index_entries()
        for e in entries:
            env, _payload = self._record_at(int(e["offset"]),
                                            expect=(int(e["stream"]), int(e["seq"])))
            if env.originating_time.ticks != int(e["orig"]):
                raise StoreIntegrityError(
                    "index originating_time does not match record",
                    stream_id=env.stream_id, sequence=env.sequence)
        return len(entries)


@dataclass(frozen=True)
class ReplayReport:
    message_count: int
    wall_seconds: float
    max_pacing_error: Duration


def replay(reader: StoreReader, sink: Callable[[Message], None],
           speed: Optional[Union[Fraction, float, int]] = MAX_SPEED,
           streams: Optional[Iterable[Union[str, int]]] = None,
           time_range: Optional[tuple[Timestamp, Timestamp]] = None,
           ) -> ReplayReport:
    """Deliver a session to a sink in merge order, optionally paced.

    At speed s the wall-clock gap between deliveries approximates the
    originating-time gap divided by s (best effort); with MAX_SPEED there
    is no pacing. Ordering is strict in either case.
    """
    if speed is not MAX_SPEED:
        speed = float(speed)
        if speed <= 0:
            raise ValueError("replay speed must be positive")
    count = 0
    first_orig: Optional[int] = None
    max_err_ticks = 0
    start = time.perf_counter_ns()
    for message in reader.read_merged(streams=streams, time_range=time_range):
        if speed is not MAX_SPEED:
            if first_orig is None:
                first_orig = message.envelope.originating_time.ticks
            target_ns = start + (message.envelope.originating_time.ticks
                                 - first_orig) * 100 / speed
            now = time.perf_counter_ns()
            if now < target_ns:
                time.sleep((target_ns - now) / 1e9)
                now = time.perf_counter_ns()
            err = abs(now - target_ns) // 100
            if err > max_err_ticks:
                max_err_ticks = int(err)
        sink(message)
        count += 1
    wall = (time.perf_counter_ns() - start) / 1e9
    return ReplayReport(message_count=count, wall_seconds=wall,
                        max_pacing_error=Duration(max_err_ticks))
