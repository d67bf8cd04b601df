import pytest
from hypothesis import given
from hypothesis import strategies as st

from chronoflow.errors import ConfigError, UnknownStreamError
from chronoflow.messages import (
    Envelope,
    EnvelopeSummary,
    StreamMetadata,
    StreamRegistry,
    Violation,
    validate_envelope,
)
from chronoflow.timebase import Timestamp
from fractions import Fraction


def env(seq, orig, creat=None, stream_id=0):
    return Envelope(stream_id=stream_id, sequence=seq,
                    originating_time=Timestamp(orig),
                    creation_time=Timestamp(creat if creat is not None else orig))


class TestValidateEnvelope:
    def test_first_message_ok(self):
        assert validate_envelope(env(0, 100, 100), None) is None

    def test_first_message_must_start_at_zero(self):
        assert validate_envelope(env(1, 100), None) is Violation.SEQUENCE_GAP

    def test_equal_time_is_non_monotone(self):
        last = EnvelopeSummary(0, Timestamp(100))
        assert validate_envelope(env(1, 100), last) is Violation.NON_MONOTONE_TIME

    def test_sequence_gap(self):
        last = EnvelopeSummary(4, Timestamp(100))
        assert validate_envelope(env(6, 200), last) is Violation.SEQUENCE_GAP

    def test_negative_latency(self):
        assert validate_envelope(env(0, 100, 99), None) is Violation.NEGATIVE_LATENCY

    def test_accepting_chain(self):
        last = None
        for seq, orig in enumerate([5, 8, 9, 1000]):
            e = env(seq, orig, orig + 3)
            assert validate_envelope(e, last) is None
            last = EnvelopeSummary(e.sequence, e.originating_time)

    @given(st.lists(st.tuples(st.integers(0, 10**9), st.integers(0, 10**6)),
                    min_size=1, max_size=50))
    def test_accepted_folds_are_strict_and_contiguous(self, raw):
        # Build an always-valid chain, then assert the fold invariant the
        # validator is meant to guarantee.
        times = sorted(set(t for t, _ in raw))
        last = None
        accepted = []
        for seq, (t, lat) in enumerate(zip(times, (l for _, l in raw))):
            e = env(seq, t, t + lat)
            assert validate_envelope(e, last) is None
            accepted.append(e)
            last = EnvelopeSummary(e.sequence, e.originating_time)
        for a, b in zip(accepted, accepted[1:]):
            assert b.sequence == a.sequence + 1
            assert b.originating_time > a.originating_time


class TestStreamRegistry:
    def meta(self, sid, name):
        return StreamMetadata(stream_id=sid, name=name, type_id=1,
                              nominal_rate_hz=Fraction(10))

    def test_lookup(self):
        reg = StreamRegistry([self.meta(0, "imu"), self.meta(1, "gaze")])
        assert reg.by_name("imu").stream_id == 0
        assert reg.by_id(1).name == "gaze"
        assert "imu" in reg and "nope" not in reg
        assert len(reg) == 2

    def test_duplicate_name_rejected(self):
        with pytest.raises(ConfigError):
            StreamRegistry([self.meta(0, "imu"), self.meta(1, "imu")])

    def test_duplicate_id_rejected(self):
        with pytest.raises(ConfigError):
            StreamRegistry([self.meta(0, "a"), self.meta(0, "b")])

    def test_unknown_stream(self):
        reg = StreamRegistry([])
        with pytest.raises(UnknownStreamError):
            reg.by_name("ghost")

    def test_replace_toggles_enabled(self):
        reg = StreamRegistry([self.meta(0, "imu")])
        meta = reg.by_name("imu")
        reg.replace(StreamMetadata(meta.stream_id, meta.name, meta.type_id,
                                   meta.nominal_rate_hz, enabled=False))
        assert reg.by_name("imu").enabled is False
