import hashlib
import socket
import time
import struct
from fractions import Fraction

import pytest

from chronoflow.errors import ClockSyncError, ProtocolError, StoreIntegrityError
from chronoflow.messages import Envelope, StreamMetadata
from chronoflow.netstream import (
    FT_ERROR,
    PROTOCOL_VERSION,
    SimulatedLink,
    StreamClient,
    StreamServer,
    decode_data_body,
    encode_data_body,
)
from chronoflow.store import DATA_FILE, INDEX_FILE, StoreReader, StoreWriter
from chronoflow.timebase import (
    Duration,
    LiveClock,
    OffsetClock,
    Timestamp,
    estimate_offset,
)

STREAMS = [StreamMetadata(0, "imu", 1, Fraction(200)),
           StreamMetadata(1, "head_pose", 2, Fraction(60))]


def env(stream_id, seq, orig, creat=None):
    return Envelope(stream_id, seq, Timestamp(orig),
                    Timestamp(creat if creat is not None else orig))


def build_store(path, records=60):
    # written in merge order, as a virtual capture would be
    rows = [(3 * k + 1, 0, k, bytes([k % 251]) * (k % 40)) for k in range(records)]
    rows += [(5 * k + 2, 1, k // 3, b"pose" * (k % 7))
             for k in range(records) if k % 3 == 0]
    rows.sort()
    w = StoreWriter(path, "netsession", STREAMS)
    for orig, sid, seq, payload in rows:
        w.write(env(sid, seq, orig, orig + 1), payload)
    w.finalize()
    return path


class TestDataBodyCodec:
    def test_wire_equals_disk_record_body(self, tmp_path):
        build_store(tmp_path)
        data = (tmp_path / DATA_FILE).read_bytes()
        with StoreReader(tmp_path) as r:
            for entry in r.index_entries():
                offset = int(entry["offset"])
                (rec_len,) = struct.unpack_from("<I", data, offset)
                disk_body = data[offset + 4:offset + 4 + rec_len]
                envelope, payload = decode_data_body(disk_body)
                assert encode_data_body(envelope, payload) == disk_body

    def test_decode_rejects_corrupt_payload(self):
        body = bytearray(encode_data_body(env(3, 9, 77), b"payload!"))
        body[struct.calcsize("<IQqqI")] ^= 0x40  # flip one payload bit
        with pytest.raises(StoreIntegrityError) as exc_info:
            decode_data_body(bytes(body))
        assert exc_info.value.stream_id == 3
        assert exc_info.value.sequence == 9

    def test_decode_rejects_bad_length(self):
        body = encode_data_body(env(0, 0, 1), b"xyz")
        with pytest.raises(ProtocolError):
            decode_data_body(body[:-1])


class TestServeSubscribe:
    def test_directory_then_silence_for_empty_subscription(self, tmp_path):
        build_store(tmp_path)
        with StreamServer.for_store(tmp_path) as server:
            with StreamClient(server.host, server.port) as client:
                assert [s.name for s in client.directory] == ["imu", "head_pose"]
                assert client.session_id is not None
                client.subscribe([])
                assert list(client.messages()) == []

    def test_subscribed_stream_matches_store_bytes(self, tmp_path):
        build_store(tmp_path)
        with StoreReader(tmp_path) as r:
            expected = [(m.envelope, m.payload) for m in
                        r.read_merged(streams=["imu"])]
        with StreamServer.for_store(tmp_path) as server:
            with StreamClient(server.host, server.port) as client:
                client.subscribe(["imu"])
                got = [(m.envelope, m.payload) for m in client.messages()]
        assert got == expected

    def test_filter_only_subscribed_ids(self, tmp_path):
        build_store(tmp_path)
        with StreamServer.for_store(tmp_path) as server:
            with StreamClient(server.host, server.port) as client:
                client.subscribe(["imu", "head_pose"])
                ids = {m.envelope.stream_id for m in client.messages()}
        assert ids == {0, 1}

    def test_per_stream_times_increase_at_client(self, tmp_path):
        build_store(tmp_path)
        with StreamServer.for_store(tmp_path) as server:
            with StreamClient(server.host, server.port) as client:
                client.subscribe(["imu", "head_pose"])
                last = {}
                for m in client.messages():
                    sid = m.envelope.stream_id
                    t = m.envelope.originating_time.ticks
                    assert sid not in last or t > last[sid]
                    last[sid] = t

    def test_unknown_stream_is_error_code_3(self, tmp_path):
        build_store(tmp_path)
        with StreamServer.for_store(tmp_path) as server:
            with StreamClient(server.host, server.port) as client:
                client.subscribe(["ghost"])
                with pytest.raises(ProtocolError) as exc_info:
                    list(client.messages())
        assert exc_info.value.code == 3

    def test_rebase_offset_applied_to_both_timestamps(self, tmp_path):
        build_store(tmp_path)
        shift = Duration.from_seconds(3)
        with StreamServer.for_store(tmp_path) as server:
            with StreamClient(server.host, server.port) as client:
                client.subscribe(["imu"], rebase_offset=shift)
                first = next(client.messages())
        assert first.envelope.originating_time.ticks == 1 + shift.ticks
        assert first.envelope.creation_time.ticks == 2 + shift.ticks


class TestProtocolErrors:
    def read_frame(self, sock):
        header = sock.recv(4)
        (length,) = struct.unpack("<I", header)
        body = b""
        while len(body) < length:
            body += sock.recv(length - len(body))
        return body[0], body[1:]

    def test_garbage_first_frame_gets_error_2(self, tmp_path):
        build_store(tmp_path)
        with StreamServer.for_store(tmp_path) as server:
            with socket.create_connection((server.host, server.port)) as sock:
                sock.sendall(struct.pack("<IB", 5, 99) + b"junk")
                frame_type, body = self.read_frame(sock)
        assert frame_type == FT_ERROR
        code, _len = struct.unpack_from("<HH", body, 0)
        assert code == 2

    def test_version_mismatch_gets_error_1(self, tmp_path):
        build_store(tmp_path)
        with StreamServer.for_store(tmp_path) as server:
            with socket.create_connection((server.host, server.port)) as sock:
                hello = struct.pack("<H16s", PROTOCOL_VERSION + 1, b"\x00" * 16)
                sock.sendall(struct.pack("<I", 1 + len(hello)) + b"\x00" + hello)
                frame_type, body = self.read_frame(sock)
        assert frame_type == FT_ERROR
        assert struct.unpack_from("<H", body, 0)[0] == 1

    def test_oversize_frame_rejected(self, tmp_path):
        build_store(tmp_path)
        with StreamServer.for_store(tmp_path) as server:
            with socket.create_connection((server.host, server.port)) as sock:
                sock.sendall(struct.pack("<I", 17 * 1024 * 1024))
                frame_type, body = self.read_frame(sock)
        assert frame_type == FT_ERROR
        assert struct.unpack_from("<H", body, 0)[0] == 2


class TestEndToEndFidelity:
    def test_relayed_store_is_byte_identical(self, tmp_path):
        original = tmp_path / "original"
        relayed = tmp_path / "relayed"
        build_store(original, records=80)
        with StreamServer.for_store(original) as server:
            with StreamClient(server.host, server.port) as client:
                writer = StoreWriter(relayed, "netsession",
                                     client.directory,
                                     session_id=client.session_id)
                client.subscribe([s.name for s in client.directory])
                for m in client.messages():
                    writer.write(m.envelope, m.payload)
                writer.finalize()
        assert (original / DATA_FILE).read_bytes() == \
            (relayed / DATA_FILE).read_bytes()
        assert (original / INDEX_FILE).read_bytes() == \
            (relayed / INDEX_FILE).read_bytes()

    def test_two_concurrent_subscribers_get_identical_bytes(self, tmp_path):
        build_store(tmp_path)

        def fetch(server):
            client = StreamClient(server.host, server.port).connect()
            client.subscribe(["imu"])
            h = hashlib.sha256()
            for m in client.messages():
                h.update(encode_data_body(m.envelope, m.payload))
            client.close()
            return h.hexdigest()

        with StreamServer.for_store(tmp_path) as server:
            assert fetch(server) == fetch(server)


class TestLiveTap:
    def test_tap_streams_to_subscriber_and_reports_drops(self, tmp_path):
        from chronoflow.messages import Message
        from chronoflow.netstream import LiveTap, _Subscription
        from chronoflow.store import derive_session_id

        tap = LiveTap()
        session_id = derive_session_id("live", STREAMS)
        with StreamServer(STREAMS, session_id, tap=tap) as server:
            with StreamClient(server.host, server.port) as client:
                client.subscribe(["imu"])
                time.sleep(0.1)  # let the server register the subscription
                for k in range(20):
                    tap.receive(Message(env(0, k, k + 1), b"live"))
                    tap.receive(Message(env(1, k, k + 2), b"skip"))
                time.sleep(0.2)
                tap.close()  # session over: subscribers get Bye
                got = list(client.messages())
        assert [m.envelope.sequence for m in got] == list(range(20))
        assert all(m.envelope.stream_id == 0 for m in got)
        assert all(m.payload == b"live" for m in got)
        assert client.bye_drop_count == 0

    def test_subscription_drop_oldest_counts(self):
        from chronoflow.netstream import _Subscription

        sub = _Subscription({0}, capacity=4)
        for k in range(10):
            sub.offer(env(0, k, k + 1), b"x")
        batch = sub.take(timeout=0)
        assert [e.sequence for e, _ in batch] == [6, 7, 8, 9]
        assert sub.dropped == 6
        sub.offer(env(5, 0, 1), b"y")  # unsubscribed stream is ignored
        assert sub.take(timeout=0) == []


class TestClockSync:
    def test_loopback_offset_near_zero(self, tmp_path):
        build_store(tmp_path)
        shared = LiveClock()
        with StreamServer.for_store(tmp_path, clock=shared) as server:
            with StreamClient(server.host, server.port, clock=shared) as client:
                est = client.sync_clocks(exchanges=8)
        assert abs(est.offset.ticks) <= 10_000  # within 1 ms
        assert est.sample_count == 8

    def test_tcp_offset_recovered(self, tmp_path):
        build_store(tmp_path)
        base = LiveClock()
        skewed = OffsetClock(base, Duration.from_seconds(3))
        with StreamServer.for_store(tmp_path, clock=skewed) as server:
            with StreamClient(server.host, server.port, clock=base) as client:
                est = client.sync_clocks(exchanges=8)
        error = abs(est.offset.ticks - Duration.from_seconds(3).ticks)
        assert error <= est.round_trip.ticks // 2 + 10_000

    def test_zero_exchanges_is_error(self, tmp_path):
        build_store(tmp_path)
        with StreamServer.for_store(tmp_path) as server:
            with StreamClient(server.host, server.port) as client:
                with pytest.raises(ClockSyncError):
                    client.sync_clocks(exchanges=0)


class TestSimulatedLink:
    def test_symmetric_5ms_recovers_3s_offset_exactly(self):
        link = SimulatedLink(offset=Duration.from_seconds(3),
                             latency_up=Duration.from_millis(5),
                             latency_down=Duration.from_millis(5))
        est = estimate_offset(link.sample_exchanges(8))
        assert est.offset == Duration.from_seconds(3)
        # server processing cancels out of the round-trip formula
        assert est.round_trip == Duration.from_millis(10)

    def test_jitter_bounds_the_error(self):
        link = SimulatedLink(offset=Duration.from_seconds(3),
                             latency_up=Duration.from_millis(5),
                             latency_down=Duration.from_millis(5),
                             jitter_us=1000, seed=9)
        est = estimate_offset(link.sample_exchanges(16))
        error = abs((est.offset - Duration.from_seconds(3)).ticks)
        assert error <= 1000 * 10  # within the injected jitter bound
