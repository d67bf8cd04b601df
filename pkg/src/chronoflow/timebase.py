"""Timestamps, durations, clocks, and clock-offset estimation.

Every instant in the system is a signed 64-bit count of 100-nanosecond
ticks since the Unix epoch (UTC). Integer ticks keep arithmetic exact:
there is no float drift anywhere on the time axis. Operations that would
leave the 64-bit range raise TickOverflowError instead of wrapping.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Iterable, Protocol, runtime_checkable

from chronoflow.errors import ClockSyncError, TickOverflowError

TICKS_PER_MICROSECOND = 10
TICKS_PER_MILLISECOND = 10_000
TICKS_PER_SECOND = 10_000_000

_MIN_TICKS = -(2**63)
_MAX_TICKS = 2**63 - 1


def _check_ticks(ticks: int) -> int:
    if not _MIN_TICKS <= ticks <= _MAX_TICKS:
        raise TickOverflowError(f"tick count {ticks} outside signed 64-bit range")
    return ticks


@dataclass(frozen=True, order=True, slots=True)
class Duration:
    """A signed span of time in 100 ns ticks."""

    ticks: int

    def __post_init__(self):
        _check_ticks(self.ticks)

    @classmethod
    def from_micros(cls, us: int) -> "Duration":
        return cls(us * TICKS_PER_MICROSECOND)

    @classmethod
    def from_millis(cls, ms: int) -> "Duration":
        return cls(ms * TICKS_PER_MILLISECOND)

    @classmethod
    def from_seconds(cls, s: int) -> "Duration":
        return cls(s * TICKS_PER_SECOND)

    def to_micros(self) -> int:
        return self.ticks // TICKS_PER_MICROSECOND

    def to_seconds(self) -> float:
        return self.ticks / TICKS_PER_SECOND

    def __add__(self, other: "Duration") -> "Duration":
        if not isinstance(other, Duration):
            return NotImplemented
        return Duration(self.ticks + other.ticks)

    def __sub__(self, other: "Duration") -> "Duration":
        if not isinstance(other, Duration):
            return NotImplemented
        return Duration(self.ticks - other.ticks)

    def __neg__(self) -> "Duration":
        return Duration(-self.ticks)

    def __mul__(self, factor: int) -> "Duration":
        if not isinstance(factor, int):
            return NotImplemented
        return Duration(self.ticks * factor)

    __rmul__ = __mul__

    def __floordiv__(self, divisor: int) -> "Duration":
        if not isinstance(divisor, int):
            return NotImplemented
        return Duration(self.ticks // divisor)

    def __abs__(self) -> "Duration":
        return Duration(abs(self.ticks))

    def __str__(self) -> str:
        return f"{self.ticks / TICKS_PER_MILLISECOND:.3f}ms"


ZERO = Duration(0)


@dataclass(frozen=True, order=True, slots=True)
class Timestamp:
    """An instant: 100 ns ticks since the Unix epoch, UTC."""

    ticks: int

    def __post_init__(self):
        _check_ticks(self.ticks)

    def __add__(self, delta: Duration) -> "Timestamp":
        if not isinstance(delta, Duration):
            return NotImplemented
        return Timestamp(self.ticks + delta.ticks)

    def __sub__(self, other):
        if isinstance(other, Timestamp):
            return Duration(self.ticks - other.ticks)
        if isinstance(other, Duration):
            return Timestamp(self.ticks - other.ticks)
        return NotImplemented

    def __str__(self) -> str:
        return f"@{self.ticks}"


EPOCH = Timestamp(0)


def ticks_from_micros(us: int) -> Timestamp:
    """Exact conversion: one microsecond is ten ticks, no rounding."""
    return Timestamp(us * TICKS_PER_MICROSECOND)


def micros_from_ticks(ts: Timestamp) -> int:
    """Inverse of ticks_from_micros; floors sub-microsecond residue."""
    return ts.ticks // TICKS_PER_MICROSECOND


@dataclass(frozen=True, slots=True)
class ClockSyncSample:
    """One four-timestamp exchange: client send, server receive, server
    send, client receive."""

    t0: Timestamp
    t1: Timestamp
    t2: Timestamp
    t3: Timestamp

    def __post_init__(self):
        if self.t2 < self.t1:
            raise ValueError("server timestamps out of order (t1 > t2)")
        if self.t3 < self.t0:
            raise ValueError("client timestamps out of order (t0 > t3)")

    def round_trip(self) -> Duration:
        return (self.t3 - self.t0) - (self.t2 - self.t1)

    def offset(self) -> Duration:
        # Server clock minus client clock; exact when one-way latencies
        # are symmetric, floor-halved otherwise (error <= half a tick).
        return Duration(((self.t1 - self.t0) + (self.t2 - self.t3)).ticks // 2)


@dataclass(frozen=True, slots=True)
class OffsetEstimate:
    """Result of offset estimation over a batch of exchanges."""

    offset: Duration
    round_trip: Duration
    sample_count: int


def estimate_offset(samples: Iterable[ClockSyncSample]) -> OffsetEstimate:
    """Estimate server-minus-client clock offset from sync exchanges.

    Uses the four-timestamp formula offset = ((t1-t0)+(t2-t3))/2 and
    round_trip = (t3-t0)-(t2-t1), taking the minimum-round-trip sample
    (the exchange least polluted by queueing delay). Samples whose
    computed round trip is negative are discarded.
    """
    samples = list(samples)
    if not samples:
        raise ClockSyncError("no clock-sync samples")
    best = None
    for sample in samples:
        rtt = sample.round_trip()
        if rtt.ticks < 0:
            continue
        if best is None or rtt < best[0]:
            best = (rtt, sample)
    if best is None:
        raise ClockSyncError("all clock-sync samples had negative round trips")
    rtt, sample = best
    return OffsetEstimate(offset=sample.offset(), round_trip=rtt,
                          sample_count=len(samples))


@runtime_checkable
class Clock(Protocol):
    """Source of non-decreasing timestamps."""

    def now(self) -> Timestamp: ...


class LiveClock:
    """Wall-anchored high-resolution clock.

    Anchors the wall clock once at construction and advances it with the
    perf counter, so reads are high-resolution and never decrease even if
    the system clock steps.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._anchor_ticks = time.time_ns() // 100
        self._anchor_perf = time.perf_counter_ns()
        self._last = self._anchor_ticks

    def now(self) -> Timestamp:
        with self._lock:
            ticks = self._anchor_ticks + (time.perf_counter_ns() - self._anchor_perf) // 100
            if ticks < self._last:
                ticks = self._last
            else:
                self._last = ticks
            return Timestamp(ticks)


class VirtualClock:
    """Discrete-event clock advanced only by its single scheduler owner."""

    def __init__(self, epoch: Timestamp = EPOCH):
        self._now = epoch

    def now(self) -> Timestamp:
        return self._now

    def advance_to(self, instant: Timestamp) -> None:
        if instant < self._now:
            raise ValueError(
                f"virtual clock cannot move backwards ({instant} < {self._now})")
        self._now = instant


class OffsetClock:
    """A clock shifted by a fixed offset; models a peer with skewed time."""

    def __init__(self, base: Clock, offset: Duration):
        self._base = base
        self._offset = offset

    def now(self) -> Timestamp:
        return self._base.now() + self._offset
