"""Typed payloads, per-message envelopes, and stream metadata.

All payloads are immutable values. Geometry follows the usual conventions:
positions in meters, quaternions as (x, y, z, w) unit vectors, depth in
millimeters, PCM as little-endian signed 16-bit interleaved samples.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, NamedTuple, Optional

from chronoflow.errors import ConfigError, UnknownStreamError
from chronoflow.timebase import Timestamp

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]  # (x, y, z, w)

HAND_JOINT_COUNT = 26
QUAT_NORM_TOLERANCE = 1e-4
UNIT_NORM_TOLERANCE = 1e-4


class PayloadType(enum.IntEnum):
    IMU = 1
    HEAD_POSE = 2
    GAZE_RAY = 3
    HAND_FRAME = 4
    AUDIO_FRAME = 5
    DEPTH_FRAME = 6
    VIDEO_FRAME = 7


class Handedness(enum.IntEnum):
    LEFT = 0
    RIGHT = 1


class DepthMode(enum.IntEnum):
    AHAT = 0
    LONG_THROW = 1


class PixelFormat(enum.IntEnum):
    RGB8 = 0
    GRAY8 = 1

    @property
    def bytes_per_pixel(self) -> int:
        return 3 if self is PixelFormat.RGB8 else 1


DEPTH_DEFAULT_SIZE = {DepthMode.AHAT: (512, 512), DepthMode.LONG_THROW: (320, 288)}


@dataclass(frozen=True, slots=True)
class ImuSample:
    accel: Vec3  # m/s^2
    gyro: Vec3   # rad/s
    mag: Vec3    # microtesla


@dataclass(frozen=True, slots=True)
class HeadPose:
    position: Vec3
    orientation: Quat


@dataclass(frozen=True, slots=True)
class GazeRay:
    origin: Vec3
    direction: Vec3  # unit norm
    confidence: float  # in [0, 1]


@dataclass(frozen=True, slots=True)
class HandFrame:
    handedness: Handedness
    tracked: bool
    # Exactly HAND_JOINT_COUNT joints, each (px, py, pz, qx, qy, qz, qw).
    joints: tuple[tuple[float, float, float, float, float, float, float], ...]


@dataclass(frozen=True, slots=True)
class AudioFrame:
    sample_rate_hz: int
    channels: int
    bits_per_sample: int  # fixed 16
    sample_count: int
    pcm: bytes


@dataclass(frozen=True, slots=True)
class DepthFrame:
    mode: DepthMode
    width: int
    height: int
    depth_mm: bytes  # u16 little-endian, row-major


@dataclass(frozen=True, slots=True)
class VideoFrame:
    width: int
    height: int
    format: PixelFormat
    pixels: bytes  # row-major


def quat_norm(q: Quat) -> float:
    return math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])


def vec_norm(v: Vec3) -> float:
    return math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


class Envelope(NamedTuple):
    """Per-message metadata.

    originating_time is the capture instant stamped at the source;
    creation_time is when the emitting component produced the message.
    Their difference is the source latency and is always non-negative.
    """

    stream_id: int
    sequence: int
    originating_time: Timestamp
    creation_time: Timestamp


class EnvelopeSummary(NamedTuple):
    """The part of the last accepted envelope needed to validate the next."""

    sequence: int
    originating_time: Timestamp


class Violation(enum.Enum):
    SEQUENCE_GAP = "sequence gap"
    NON_MONOTONE_TIME = "non-monotone originating time"
    NEGATIVE_LATENCY = "creation time before originating time"


def validate_envelope(env: Envelope, last: Optional[EnvelopeSummary]) -> Optional[Violation]:
    """Check stream discipline; returns None when the envelope is acceptable.

    Sequence numbers must be contiguous from 0 and originating times
    strictly increasing within a stream; source latency must be
    non-negative.
    """
    if last is None:
        if env.sequence != 0:
            return Violation.SEQUENCE_GAP
    else:
        if env.sequence != last.sequence + 1:
            return Violation.SEQUENCE_GAP
        if env.originating_time <= last.originating_time:
            return Violation.NON_MONOTONE_TIME
    if env.creation_time < env.originating_time:
        return Violation.NEGATIVE_LATENCY
    return None


class Message(NamedTuple):
    """An envelope plus its payload (typed object, or raw encoded bytes)."""

    envelope: Envelope
    payload: Any

    @property
    def time(self) -> Timestamp:
        return self.envelope.originating_time


@dataclass(frozen=True, slots=True)
class StreamMetadata:
    """Identity and rate of one stream within a registry."""

    stream_id: int
    name: str
    type_id: int
    nominal_rate_hz: Fraction
    enabled: bool = True

    def __post_init__(self):
        if self.stream_id < 0 or self.stream_id > 0xFFFFFFFF:
            raise ConfigError(f"stream_id {self.stream_id} outside u32 range")
        if not self.name:
            raise ConfigError("stream name must be non-empty")
        if self.nominal_rate_hz < 0:
            raise ConfigError(f"stream {self.name!r}: negative nominal rate")


class StreamRegistry:
    """Streams of one session, keyed by unique id and unique name."""

    def __init__(self, streams: Optional[list[StreamMetadata]] = None):
        self._by_id: dict[int, StreamMetadata] = {}
        self._by_name: dict[str, StreamMetadata] = {}
        for s in streams or []:
            self.add(s)

    def add(self, meta: StreamMetadata) -> None:
        if meta.stream_id in self._by_id:
            raise ConfigError(f"duplicate stream id {meta.stream_id}")
        if meta.name in self._by_name:
            raise ConfigError(f"duplicate stream name {meta.name!r}")
        self._by_id[meta.stream_id] = meta
        self._by_name[meta.name] = meta

    def replace(self, meta: StreamMetadata) -> None:
        old = self._by_id.get(meta.stream_id)
        if old is None or old.name != meta.name:
            raise UnknownStreamError(meta.name)
        self._by_id[meta.stream_id] = meta
        self._by_name[meta.name] = meta

    def by_id(self, stream_id: int) -> StreamMetadata:
        try:
            return self._by_id[stream_id]
        except KeyError:
            raise UnknownStreamError(f"id {stream_id}") from None

    def by_name(self, name: str) -> StreamMetadata:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownStreamError(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __iter__(self):
        return iter(self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)
