"""Deterministic simulated sensor sources.

Each source emits on an exact rational grid: emission k of a source with
rate num/den Hz has grid time t0 + floor(k * 10^7 * den / num) ticks, so
long-run rates are exact regardless of whether the period divides the
tick. Optional uniform jitter is applied per emission around the grid
(never accumulated), and a uniform latency draw separates creation_time
from originating_time. Every draw comes from a per-source
splitmix64-seeded xoshiro256**, in a fixed order per emission (jitter,
latency, then payload noise), which makes the whole message sequence a
pure function of (config, t_end).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Optional

import numpy as np

from chronoflow.errors import ConfigError
from chronoflow.messages import (
    HAND_JOINT_COUNT,
    AudioFrame,
    DepthFrame,
    DepthMode,
    Envelope,
    GazeRay,
    HandFrame,
    Handedness,
    HeadPose,
    ImuSample,
    Message,
    PayloadType,
    PixelFormat,
    VideoFrame,
)
from chronoflow.rng import Xoshiro256StarStar
from chronoflow.timebase import TICKS_PER_SECOND, Duration, Timestamp

KIND_TO_TYPE_ID = {
    "imu": PayloadType.IMU,
    "head_pose": PayloadType.HEAD_POSE,
    "gaze": PayloadType.GAZE_RAY,
    "hand": PayloadType.HAND_FRAME,
    "audio": PayloadType.AUDIO_FRAME,
    "depth": PayloadType.DEPTH_FRAME,
    "video": PayloadType.VIDEO_FRAME,
}


@dataclass(frozen=True)
class SimSourceConfig:
    """Rate/jitter/latency/seed description of one simulated sensor."""

    name: str
    kind: str
    rate_hz: Fraction
    jitter_us: int = 0
    latency_us: tuple[int, int] = (0, 0)
    seed: int = 0
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KIND_TO_TYPE_ID:
            raise ConfigError(f"{self.name}: unknown source kind {self.kind!r}")
        if self.rate_hz <= 0:
            raise ConfigError(f"{self.name}: rate must be positive")
        if self.jitter_us < 0:
            raise ConfigError(f"{self.name}: jitter must be non-negative")
        lo, hi = self.latency_us
        if lo < 0 or hi < lo:
            raise ConfigError(f"{self.name}: latency range must satisfy "
                              f"0 <= min <= max")
        # Strict per-stream monotonicity requires the jittered grid never to
        # fold: twice the jitter bound must stay below the smallest grid gap
        # (the floor of the rational period).
        min_gap = self.min_grid_gap_ticks
        if min_gap < 1:
            raise ConfigError(f"{self.name}: rate {self.rate_hz} exceeds the "
                              f"tick resolution")
        if self.jitter_us and 2 * self.jitter_us * 10 >= min_gap:
            raise ConfigError(
                f"{self.name}: jitter {self.jitter_us} us too large for rate "
                f"{self.rate_hz} Hz (needs 2*jitter < period)")

    @property
    def period_ticks(self) -> Fraction:
        return Fraction(TICKS_PER_SECOND) / self.rate_hz

    @property
    def min_grid_gap_ticks(self) -> int:
        return (TICKS_PER_SECOND * self.rate_hz.denominator) // self.rate_hz.numerator

    @property
    def type_id(self) -> int:
        return int(KIND_TO_TYPE_ID[self.kind])


_TWO_PI = 2.0 * math.pi


class SimSource:
    """Deterministic message generator for one stream."""

    def __init__(self, config: SimSourceConfig, stream_id: int,
                 t0: Timestamp = Timestamp(0)):
        self.config = config
        self.stream_id = stream_id
        self.t0 = t0
        self._rng = Xoshiro256StarStar(config.seed)
        self._grid_num = TICKS_PER_SECOND * config.rate_hz.denominator
        self._grid_den = config.rate_hz.numerator
        self._jitter_ticks = config.jitter_us * 10
        self._lat_lo, self._lat_hi = config.latency_us
        self._k = 0          # next grid slot to consider
        self._seq = 0        # next sequence number (contiguous per stream)
        self._last_emitted: Optional[int] = None
        self._pending_time: Optional[int] = None  # jittered time of slot _k
        self._init_synth()

    # -- scheduling ---------------------------------------------------------

    def grid_ticks(self, k: int) -> int:
        return self.t0.ticks + (k * self._grid_num) // self._grid_den

    def peek_next_time(self) -> Timestamp:
        """Originating time of the next emission (jitter already applied)."""
        if self._pending_time is None:
            t = self.grid_ticks(self._k)
            if self._jitter_ticks:
                t += self._rng.randint(-self._jitter_ticks, self._jitter_ticks)
            self._pending_time = t
        return Timestamp(self._pending_time)

    def emit(self) -> Message:
        """Produce the message for the pending slot and advance."""
        t = self.peek_next_time()
        latency = self._draw_latency_ticks()
        payload = self._synthesize(self._k, t.ticks)
        env = Envelope(self.stream_id, self._seq, t,
                       Timestamp(t.ticks + latency))
        self._k += 1
        self._seq += 1
        self._last_emitted = t.ticks
        self._pending_time = None
        return Message(env, payload)

    def generate_until(self, t_end: Timestamp) -> list[Message]:
        """All pending messages with originating_time strictly before t_end."""
        out = []
        while self.peek_next_time() < t_end:
            out.append(self.emit())
        return out

    def skip_to(self, resume: Timestamp) -> None:
        """Advance past grid slots so no future emission can originate before
        `resume` or collide with the stream's history (used when a stream is
        re-enabled mid-session). Sequence numbering continues unbroken."""
        target = resume.ticks
        if self._last_emitted is not None:
            target = max(target, self._last_emitted + 1)
        target += self._jitter_ticks  # any jitter draw must stay >= resume
        rel = target - self.t0.ticks
        k_min = max(0, -((-rel * self._grid_den) // self._grid_num))  # ceil
        if k_min > self._k:
            self._k = k_min
            self._pending_time = None

    def _draw_latency_ticks(self) -> int:
        if self._lat_hi == 0:
            return self._lat_lo * 10
        return self._rng.randint(self._lat_lo, self._lat_hi) * 10

    # -- payload synthesis ----------------------------------------------------
    # Exact formulas are arbitrary but fixed: determinism is the contract.

    def _init_synth(self):
        kind = self.config.kind
        params = self.config.params
        if kind == "head_pose" or kind == "gaze" or kind == "hand":
            # per-source phase offsets make distinct streams distinct
            self._phase0 = self._rng.next_float() * _TWO_PI
            self._phase1 = self._rng.next_float() * _TWO_PI
        if kind == "hand":
            side = params.get("handedness", "left")
            if side not in ("left", "right"):
                raise ConfigError(f"{self.config.name}: handedness must be "
                                  f"left or right")
            self._handedness = Handedness.LEFT if side == "left" else Handedness.RIGHT
        if kind == "audio":
            self._sample_rate = int(params.get("sample_rate_hz", 48_000))
            self._channels = int(params.get("channels", 1))
            spf = Fraction(self._sample_rate) / self.config.rate_hz
            if spf.denominator != 1:
                raise ConfigError(
                    f"{self.config.name}: sample rate {self._sample_rate} not "
                    f"divisible by frame rate {self.config.rate_hz}")
            self._samples_per_frame = int(spf)
        if kind == "depth":
            mode = params.get("mode", "ahat")
            if mode not in ("ahat", "long_throw"):
                raise ConfigError(f"{self.config.name}: depth mode must be "
                                  f"ahat or long_throw")
            self._depth_mode = DepthMode.AHAT if mode == "ahat" else DepthMode.LONG_THROW
            default_w, default_h = (512, 512) if mode == "ahat" else (320, 288)
            self._width = int(params.get("width", default_w))
            self._height = int(params.get("height", default_h))
            ys = np.arange(self._height, dtype=np.int32)[:, None]
            xs = np.arange(self._width, dtype=np.int32)[None, :]
            self._depth_base = 3 * xs + 5 * ys
        if kind == "video":
            self._width = int(params.get("width", 424))
            self._height = int(params.get("height", 240))
            fmt = params.get("format", "rgb8")
            if fmt not in ("rgb8", "gray8"):
                raise ConfigError(f"{self.config.name}: format must be rgb8 "
                                  f"or gray8")
            self._format = PixelFormat.RGB8 if fmt == "rgb8" else PixelFormat.GRAY8
            ys = np.arange(self._height, dtype=np.int32)[:, None]
            xs = np.arange(self._width, dtype=np.int32)[None, :]
            self._vx = np.broadcast_to(xs, (self._height, self._width))
            self._vy = np.broadcast_to(ys, (self._height, self._width))

    def _synthesize(self, k: int, t_ticks: int):
        kind = self.config.kind
        if kind == "imu":
            return self._make_imu()
        if kind == "head_pose":
            return self._make_head_pose(t_ticks)
        if kind == "gaze":
            return self._make_gaze(t_ticks)
        if kind == "hand":
            return self._make_hand(t_ticks)
        if kind == "audio":
            return self._make_audio(k)
        if kind == "depth":
            return self._make_depth(k)
        return self._make_video(k)

    def _noise(self) -> float:
        return self._rng.next_float() * 2.0 - 1.0

    def _make_imu(self) -> ImuSample:
        n = self._noise
        return ImuSample(
            accel=(0.05 * n(), 0.05 * n(), 9.81 + 0.05 * n()),
            gyro=(0.02 * n(), 0.02 * n(), 0.02 * n()),
            mag=(22.0 + 0.5 * n(), 5.0 + 0.5 * n(), 41.0 + 0.5 * n()),
        )

    def _make_head_pose(self, t_ticks: int) -> HeadPose:
        t = t_ticks / TICKS_PER_SECOND
        angle = _TWO_PI * t / 12.0 + self._phase0
        position = (0.4 * math.sin(angle),
                    1.6 + 0.05 * math.sin(0.37 * angle + self._phase1),
                    0.4 * math.cos(angle))
        yaw = 0.5 * math.sin(angle)
        orientation = (0.0, math.sin(yaw / 2.0), 0.0, math.cos(yaw / 2.0))
        return HeadPose(position=position, orientation=orientation)

    def _make_gaze(self, t_ticks: int) -> GazeRay:
        t = t_ticks / TICKS_PER_SECOND
        yaw = 0.3 * math.sin(0.9 * t + self._phase0) + 0.01 * self._noise()
        pitch = 0.2 * math.sin(0.7 * t + self._phase1) + 0.01 * self._noise()
        direction = (math.sin(yaw) * math.cos(pitch),
                     math.sin(pitch),
                     math.cos(yaw) * math.cos(pitch))
        norm = math.sqrt(sum(c * c for c in direction))
        direction = (direction[0] / norm, direction[1] / norm, direction[2] / norm)
        confidence = min(1.0, max(0.0, 0.9 + 0.1 * self._noise()))
        return GazeRay(origin=(0.0, 1.6, 0.0), direction=direction,
                       confidence=confidence)

    def _make_hand(self, t_ticks: int) -> HandFrame:
        t = t_ticks / TICKS_PER_SECOND
        sign = -1.0 if self._handedness is Handedness.LEFT else 1.0
        wrist_x = sign * 0.2
        wrist_y = 1.2 + 0.1 * math.sin(_TWO_PI * t / 3.0 + self._phase0)
        joints = []
        for i in range(HAND_JOINT_COUNT):
            wiggle = 0.02 * math.sin(_TWO_PI * t / 1.5 + self._phase1 + 0.3 * i)
            px = wrist_x + 0.01 * i * sign
            py = wrist_y + wiggle
            pz = 0.3 + 0.005 * i
            bend = 0.2 * math.sin(_TWO_PI * t / 2.0 + 0.3 * i)
            joints.append((px, py, pz,
                           math.sin(bend / 2.0), 0.0, 0.0, math.cos(bend / 2.0)))
        return HandFrame(handedness=self._handedness, tracked=True,
                         joints=tuple(joints))

    def _make_audio(self, k: int) -> AudioFrame:
        spf = self._samples_per_frame
        base = k * spf
        n = np.arange(base, base + spf, dtype=np.float64)
        tone = 0.25 * np.sin(_TWO_PI * 440.0 * n / self._sample_rate)
        noise = np.array([self._noise() for _ in range(spf)], dtype=np.float64)
        wave = tone + 0.02 * noise
        pcm_samples = np.clip(np.rint(wave * 32767.0), -32768, 32767).astype("<i2")
        if self._channels > 1:
            pcm_samples = np.repeat(pcm_samples, self._channels)
        return AudioFrame(sample_rate_hz=self._sample_rate,
                          channels=self._channels, bits_per_sample=16,
                          sample_count=spf, pcm=pcm_samples.tobytes())

    def _make_depth(self, k: int) -> DepthFrame:
        frame = ((self._depth_base + 7 * k) % 1024 + 500).astype("<u2")
        return DepthFrame(mode=self._depth_mode, width=self._width,
                          height=self._height, depth_mm=frame.tobytes())

    def _make_video(self, k: int) -> VideoFrame:
        if self._format is PixelFormat.RGB8:
            r = ((self._vx + 2 * k) % 256).astype(np.uint8)
            g = ((self._vy + 3 * k) % 256).astype(np.uint8)
            b = ((self._vx + self._vy + k) % 256).astype(np.uint8)
            pixels = np.stack([r, g, b], axis=-1).tobytes()
        else:
            pixels = ((self._vx + self._vy + 4 * k) % 256).astype(np.uint8).tobytes()
        return VideoFrame(width=self._width, height=self._height,
                          format=self._format, pixels=pixels)


def default_scenario() -> list[SimSourceConfig]:
    """The nine desk-scale default streams.

    Rates and resolutions are chosen so a 10 s session stays desk-sized
    while preserving multi-rate asynchrony; seeds are fixed and distinct.
    """
    lat = (500, 2500)
    return [
        SimSourceConfig("head_pose", "head_pose", Fraction(60), 0, lat, seed=101),
        SimSourceConfig("eye_gaze", "gaze", Fraction(30), 0, lat, seed=102),
        SimSourceConfig("hand_left", "hand", Fraction(60), 0, lat, seed=103,
                        params={"handedness": "left"}),
        SimSourceConfig("hand_right", "hand", Fraction(60), 0, lat, seed=104,
                        params={"handedness": "right"}),
        SimSourceConfig("imu", "imu", Fraction(200), 0, lat, seed=105),
        SimSourceConfig("audio", "audio", Fraction(100), 0, lat, seed=106,
                        params={"sample_rate_hz": 48_000, "channels": 1}),
        SimSourceConfig("rgb_video", "video", Fraction(30), 0, lat, seed=107,
                        params={"width": 424, "height": 240, "format": "rgb8"}),
        SimSourceConfig("depth_ahat", "depth", Fraction(45), 0, lat, seed=108,
                        params={"mode": "ahat"}),
        SimSourceConfig("depth_longthrow", "depth", Fraction(5), 0, lat, seed=109,
                        params={"mode": "long_throw"}),
    ]


def expected_message_count(rate_hz: Fraction, duration: Duration) -> int:
    """Exact count of zero-jitter emissions in [t0, t0 + duration).

    Grid points satisfy floor(k * P) < D, which for integer D is k*P < D;
    the count is therefore ceil(D / P) = ceil(D * rate / ticks_per_second).
    """
    num = duration.ticks * rate_hz.numerator
    den = TICKS_PER_SECOND * rate_hz.denominator
    return max(0, -((-num) // den))
