import hashlib
import json
import tempfile
import time
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from chronoflow.errors import (
    StoreError,
    StoreIntegrityError,
    StoreStateError,
    UnfinalizedStoreError,
    UnknownStreamError,
)
from chronoflow.messages import Envelope, StreamMetadata, Violation
from chronoflow.store import (
    CATALOG_FILE,
    DATA_FILE,
    FILE_HEADER_SIZE,
    INDEX_ENTRY_SIZE,
    INDEX_FILE,
    MAX_SPEED,
    EnvelopeRejected,
    StoreReader,
    StoreWriter,
    replay,
)
from chronoflow.timebase import Timestamp

IMU_META = StreamMetadata(0, "imu", 1, Fraction(200))
POSE_META = StreamMetadata(1, "head_pose", 2, Fraction(60))


def env(stream_id, seq, orig, creat=None):
    return Envelope(stream_id, seq, Timestamp(orig),
                    Timestamp(creat if creat is not None else orig))


def open_writer(path, streams=(IMU_META, POSE_META), name="test"):
    return StoreWriter(path, name, list(streams))


class TestWriter:
    def test_first_record_length_and_offset(self, tmp_path):
        w = open_writer(tmp_path)
        offset = w.write(env(0, 0, 100), b"\x00" * 36)
        assert offset == FILE_HEADER_SIZE
        w.finalize()
        data = (tmp_path / DATA_FILE).read_bytes()
        record_length = int.from_bytes(data[24:28], "little")
        assert record_length == 72  # 36 header-after-length + 36 payload

    def test_non_monotone_time_rejected(self, tmp_path):
        w = open_writer(tmp_path)
        w.write(env(0, 0, 100), b"")
        with pytest.raises(EnvelopeRejected) as exc_info:
            w.write(env(0, 1, 100), b"")
        assert exc_info.value.violation is Violation.NON_MONOTONE_TIME
        assert w.stream_count(0) == 1  # nothing written

    def test_index_grows_by_fixed_entries(self, tmp_path):
        w = open_writer(tmp_path)
        for i in range(100):
            w.write(env(0, i, i + 1), b"xy")
        w.finalize()
        size = (tmp_path / INDEX_FILE).stat().st_size
        assert size == FILE_HEADER_SIZE + 100 * INDEX_ENTRY_SIZE

    def test_unknown_stream_rejected(self, tmp_path):
        w = open_writer(tmp_path)
        with pytest.raises(UnknownStreamError):
            w.write(env(42, 0, 100), b"")

    def test_poisoned_after_io_failure(self, tmp_path):
        w = open_writer(tmp_path)
        w.write(env(0, 0, 1), b"a")
        original_write = w._data.write
        w._data.write = lambda *a: (_ for _ in ()).throw(OSError("disk gone"))
        with pytest.raises(StoreError):
            w.write(env(0, 1, 2), b"b")
        w._data.write = original_write
        with pytest.raises(StoreStateError):
            w.write(env(0, 2, 3), b"c")
        with pytest.raises(StoreStateError):
            w.finalize()

    def test_session_id_must_be_16_bytes(self, tmp_path):
        with pytest.raises(StoreStateError):
            StoreWriter(tmp_path, "x", [IMU_META], session_id=b"short")

    def test_refuses_existing_session(self, tmp_path):
        open_writer(tmp_path).finalize()
        with pytest.raises(StoreStateError):
            open_writer(tmp_path)


class TestFinalize:
    def test_empty_session_catalog(self, tmp_path):
        w = open_writer(tmp_path)
        catalog = w.finalize()
        assert len(catalog["streams"]) == 2
        for entry in catalog["streams"]:
            assert entry["message_count"] == 0
            assert entry["first_originating_time"] is None
            assert entry["last_originating_time"] is None

    def test_imu_spacing_tallies(self, tmp_path):
        # 200 messages at an exact 5 ms grid starting at t=0
        w = open_writer(tmp_path)
        for k in range(200):
            w.write(env(0, k, k * 50_000), b"\x00" * 36)
        catalog = w.finalize()
        imu = next(s for s in catalog["streams"] if s["name"] == "imu")
        assert imu["message_count"] == 200
        assert imu["first_originating_time"] == 0
        assert imu["last_originating_time"] == 199 * 50_000

    def test_finalize_twice_errors(self, tmp_path):
        w = open_writer(tmp_path)
        w.finalize()
        with pytest.raises(StoreStateError):
            w.finalize()

    def test_write_after_finalize_errors(self, tmp_path):
        w = open_writer(tmp_path)
        w.finalize()
        with pytest.raises(StoreStateError):
            w.write(env(0, 0, 1), b"")


class TestReadMerged:
    def make_two_stream_store(self, path):
        w = open_writer(path)
        w.write(env(0, 0, 0), b"A0")
        w.write(env(0, 1, 10), b"A10")
        w.write(env(1, 0, 5), b"B5")
        w.finalize()

    def test_merge_order(self, tmp_path):
        self.make_two_stream_store(tmp_path)
        with StoreReader(tmp_path) as r:
            payloads = [m.payload for m in r.read_merged()]
        assert payloads == [b"A0", b"B5", b"A10"]

    def test_half_open_range(self, tmp_path):
        self.make_two_stream_store(tmp_path)
        with StoreReader(tmp_path) as r:
            got = [m.payload for m in
                   r.read_merged(time_range=(Timestamp(5), Timestamp(10)))]
        assert got == [b"B5"]

    def test_stream_filter_by_name(self, tmp_path):
        self.make_two_stream_store(tmp_path)
        with StoreReader(tmp_path) as r:
            got = [m.envelope.stream_id for m in r.read_merged(streams=["imu"])]
        assert got == [0, 0]

    def test_unknown_filter_name(self, tmp_path):
        self.make_two_stream_store(tmp_path)
        with StoreReader(tmp_path) as r:
            with pytest.raises(UnknownStreamError):
                list(r.read_merged(streams=["ghost"]))

    def test_crc_error_names_the_record(self, tmp_path):
        w = open_writer(tmp_path)
        w.write(env(0, 0, 1), b"payload-zero")
        corrupt_at = w.write(env(0, 1, 2), b"payload-one")
        w.write(env(0, 2, 3), b"payload-two")
        w.finalize()
        with open(tmp_path / DATA_FILE, "r+b") as f:
            f.seek(corrupt_at + 36)  # first payload byte of record 1
            f.write(b"X")
        with StoreReader(tmp_path) as r:
            it = r.read_merged()
            assert next(it).payload == b"payload-zero"
            with pytest.raises(StoreIntegrityError) as exc_info:
                next(it)
        assert exc_info.value.stream_id == 0
        assert exc_info.value.sequence == 1

    def test_missing_catalog_is_unfinalized(self, tmp_path):
        w = open_writer(tmp_path)
        w.write(env(0, 0, 1), b"x")
        w.abort()
        with pytest.raises(UnfinalizedStoreError):
            StoreReader(tmp_path)


class TestCrashConsistency:
    def build(self, path):
        w = open_writer(path)
        for k in range(5):
            w.write(env(0, k, 10 * k + 1), bytes([k]) * 10)
        w.finalize()

    def test_truncation_with_catalog_is_integrity_error(self, tmp_path):
        self.build(tmp_path)
        data_path = tmp_path / DATA_FILE
        full = data_path.read_bytes()
        # every truncation point inside the last record
        for cut in range(len(full) - 49, len(full)):
            data_path.write_bytes(full[:cut])
            with StoreReader(tmp_path) as r:
                with pytest.raises(StoreIntegrityError):
                    list(r.read_merged())
        data_path.write_bytes(full)

    def test_truncation_without_catalog_is_unfinalized(self, tmp_path):
        self.build(tmp_path)
        (tmp_path / CATALOG_FILE).unlink()
        with pytest.raises(UnfinalizedStoreError):
            StoreReader(tmp_path)


class TestIndexConsistency:
    def test_exhaustive_scan(self, tmp_path):
        w = open_writer(tmp_path)
        n = 0
        for k in range(50):
            w.write(env(0, k, 7 * k + 1), b"i" * (k % 11))
            n += 1
            if k % 2 == 0:
                w.write(env(1, k // 2, 9 * k + 2), b"p" * (k % 5))
                n += 1
        w.finalize()
        with StoreReader(tmp_path) as r:
            assert r.verify_index() == n

    def test_scan_headers_matches_arrival_order(self, tmp_path):
        w = open_writer(tmp_path)
        offsets = [w.write(env(0, k, k + 1), b"z" * k) for k in range(10)]
        w.finalize()
        with StoreReader(tmp_path) as r:
            scanned = list(r.scan_headers())
        assert [s[2] for s in scanned] == offsets
        assert [s[0].sequence for s in scanned] == list(range(10))


session_strategy = st.lists(
    st.tuples(
        st.lists(st.integers(min_value=0, max_value=10**9),
                 min_size=0, max_size=25, unique=True),
        st.integers(min_value=0, max_value=2**32 - 1),
    ),
    min_size=1, max_size=4,
)


class TestRoundTripProperty:
    @settings(max_examples=40, suppress_health_check=[HealthCheck.too_slow],
              deadline=None)
    @given(session=session_strategy, data=st.data())
    def test_write_read_round_trip(self, session, data):
        streams = [StreamMetadata(i, f"s{i}", 1, Fraction(10))
                   for i in range(len(session))]
        pending = {}
        expected = []
        for sid, (times, payload_seed) in enumerate(session):
            pending[sid] = [
                (sid, seq, t, hashlib.sha256(
                    f"{payload_seed}:{sid}:{seq}".encode()).digest()[:seq % 20])
                for seq, t in enumerate(sorted(times))]
        # arrival order interleaves streams arbitrarily while honoring
        # per-stream order
        multiset = [sid for sid, msgs in pending.items() for _ in msgs]
        arrival = data.draw(st.permutations(multiset)) if multiset else []
        with tempfile.TemporaryDirectory() as tmp:
            w = StoreWriter(tmp, "prop", streams)
            for sid in arrival:
                sid_, seq_, t_, payload_ = pending[sid].pop(0)
                w.write(env(sid_, seq_, t_), payload_)
                expected.append((t_, sid_, seq_, payload_))
            w.finalize()
            expected.sort(key=lambda x: (x[0], x[1], x[2]))
            with StoreReader(tmp) as r:
                got = [(m.envelope.originating_time.ticks, m.envelope.stream_id,
                        m.envelope.sequence, m.payload) for m in r.read_merged()]
            assert got == expected
            assert len(got) == sum(
                s["message_count"] for s in r.catalog["streams"])


class TestDeterminism:
    def write_fixed(self, path, name="det"):
        w = StoreWriter(path, name, [IMU_META, POSE_META])
        for k in range(20):
            w.write(env(0, k, 3 * k + 1, 3 * k + 2), bytes([k % 7]) * k)
            if k % 3 == 0:
                w.write(env(1, k // 3, 5 * k + 1), b"pose")
        return w.finalize()

    def test_identical_writes_identical_files(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cat_a = self.write_fixed(a)
        time.sleep(0.01)
        cat_b = self.write_fixed(b)
        assert (a / DATA_FILE).read_bytes() == (b / DATA_FILE).read_bytes()
        assert (a / INDEX_FILE).read_bytes() == (b / INDEX_FILE).read_bytes()
        cat_a.pop("created_utc")
        cat_b.pop("created_utc")
        assert cat_a == cat_b

    def test_catalog_is_valid_json_on_disk(self, tmp_path):
        self.write_fixed(tmp_path)
        parsed = json.loads((tmp_path / CATALOG_FILE).read_text())
        assert parsed["session_name"] == "det"


class TestReplay:
    def build_1s_store(self, path):
        w = open_writer(path)
        for k in range(11):  # spans exactly 1 s
            w.write(env(0, k, k * 1_000_000), bytes([k]))
        w.finalize()

    def test_max_speed_equals_read_merged(self, tmp_path):
        self.build_1s_store(tmp_path)
        with StoreReader(tmp_path) as r:
            expected = [(m.envelope, m.payload) for m in r.read_merged()]
            delivered = []
            report = replay(r, lambda m: delivered.append((m.envelope, m.payload)),
                            speed=MAX_SPEED)
        assert delivered == expected
        assert report.message_count == 11

    def test_replay_twice_identical_transcripts(self, tmp_path):
        self.build_1s_store(tmp_path)

        def transcript():
            h = hashlib.sha256()
            with StoreReader(tmp_path) as r:
                replay(r, lambda m: h.update(
                    repr(m.envelope).encode() + m.payload), speed=MAX_SPEED)
            return h.hexdigest()

        assert transcript() == transcript()

    def test_speed_2_halves_wall_time(self, tmp_path):
        self.build_1s_store(tmp_path)
        with StoreReader(tmp_path) as r:
            report = replay(r, lambda m: None, speed=2)
        assert report.wall_seconds == pytest.approx(0.5, rel=0.10)

    def test_rejects_nonpositive_speed(self, tmp_path):
        self.build_1s_store(tmp_path)
        with StoreReader(tmp_path) as r:
            with pytest.raises(ValueError):
                replay(r, lambda m: None, speed=0)
