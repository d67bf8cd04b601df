"""Temporal alignment operators: joins, interpolation, fuse, resample.

All operators consume stream-ordered message iterables (strictly
increasing originating_time) and produce stream-ordered output. Matching
is *reproducible online*: a result for primary time t is emitted only
once a secondary message beyond t + after has been observed (or the
secondary ended), so a live run and a replayed run of the same data
produce identical output.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, NamedTuple, Optional

from chronoflow.errors import BlendUnsupportedError, UnorderedInputError
from chronoflow.messages import GazeRay, HeadPose, ImuSample, Message, Quat, Vec3
from chronoflow.timebase import Duration, Timestamp


class _Sentinel:
    __slots__ = ("_name",)

    def __init__(self, name: str):
        self._name = name

    def __repr__(self):
        return self._name


#: Placeholder for a secondary that found no match (miss policy EmitAbsent).
ABSENT = _Sentinel("ABSENT")
#: interpolate_linear found no usable bracket around the requested time.
NO_BRACKET = _Sentinel("NO_BRACKET")


class Tie(enum.Enum):
    EARLIER = "earlier"
    LATER = "later"


class Miss(enum.Enum):
    DROP = "drop"
    EMIT_ABSENT = "emit_absent"


class InterpKind(enum.Enum):
    EXACT = "exact"
    NEAREST = "nearest"
    LINEAR = "linear"


@dataclass(frozen=True, slots=True)
class ToleranceWindow:
    """Inclusive window [t - before, t + after] around a primary time t."""

    before: Duration
    after: Duration

    def __post_init__(self):
        if self.before.ticks < 0 or self.after.ticks < 0:
            raise ValueError("tolerance window bounds must be non-negative")

    @classmethod
    def symmetric(cls, half: Duration) -> "ToleranceWindow":
        return cls(half, half)


ZERO_WINDOW = ToleranceWindow(Duration(0), Duration(0))

# Payload kinds with a defined linear blend; everything else rejects
# Linear interpolation at construction.
_BLENDABLE = (float, int, ImuSample, HeadPose, GazeRay)


@dataclass(frozen=True, slots=True)
class Interpolator:
    """How a secondary value is produced at a primary timestamp."""

    kind: InterpKind
    window: ToleranceWindow = ZERO_WINDOW
    tie: Tie = Tie.EARLIER
    max_gap: Optional[Duration] = None
    miss: Miss = Miss.DROP

    @classmethod
    def exact(cls, miss: Miss = Miss.DROP) -> "Interpolator":
        return cls(InterpKind.EXACT, miss=miss)

    @classmethod
    def nearest(cls, window: ToleranceWindow, tie: Tie = Tie.EARLIER,
                miss: Miss = Miss.DROP) -> "Interpolator":
        return cls(InterpKind.NEAREST, window=window, tie=tie, miss=miss)

    @classmethod
    def linear(cls, max_gap: Duration, miss: Miss = Miss.DROP,
               payload_type: Optional[type] = None) -> "Interpolator":
        if max_gap.ticks < 0:
            raise ValueError("max_gap must be non-negative")
        if payload_type is not None:
            _require_blendable(payload_type)
        return cls(InterpKind.LINEAR, max_gap=max_gap, miss=miss)


def _require_blendable(payload_type: type) -> None:
    if not issubclass(payload_type, _BLENDABLE):
        raise BlendUnsupportedError(
            f"payload kind {payload_type.__name__} has no linear blend")


def lerp_vec3(a: Vec3, b: Vec3, alpha: float) -> Vec3:
    return (a[0] + (b[0] - a[0]) * alpha,
            a[1] + (b[1] - a[1]) * alpha,
            a[2] + (b[2] - a[2]) * alpha)


def slerp(q1: Quat, q2: Quat, alpha: float) -> Quat:
    """Spherical interpolation with shortest-path sign correction.

    The result is renormalized, so outputs stay unit even when the inputs
    carry binary32 rounding.
    """
    dot = q1[0] * q2[0] + q1[1] * q2[1] + q1[2] * q2[2] + q1[3] * q2[3]
    if dot < 0.0:
        q2 = (-q2[0], -q2[1], -q2[2], -q2[3])
        dot = -dot
    if dot > 1.0 - 1e-9:
        # nearly parallel: nlerp avoids the vanishing sine
        mixed = tuple(q1[i] + (q2[i] - q1[i]) * alpha for i in range(4))
    else:
        theta = math.acos(min(dot, 1.0))
        sin_theta = math.sin(theta)
        w1 = math.sin((1.0 - alpha) * theta) / sin_theta
        w2 = math.sin(alpha * theta) / sin_theta
        mixed = tuple(q1[i] * w1 + q2[i] * w2 for i in range(4))
    norm = math.sqrt(sum(c * c for c in mixed))
    return (mixed[0] / norm, mixed[1] / norm, mixed[2] / norm, mixed[3] / norm)


def _normalize_vec3(v: Vec3) -> Vec3:
    norm = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    return (v[0] / norm, v[1] / norm, v[2] / norm)


def blend_payload(a: Any, b: Any, alpha: float) -> Any:
    """Linear blend dispatched on payload kind."""
    if isinstance(a, (float, int)):
        return a + (b - a) * alpha
    if isinstance(a, ImuSample):
        return ImuSample(accel=lerp_vec3(a.accel, b.accel, alpha),
                         gyro=lerp_vec3(a.gyro, b.gyro, alpha),
                         mag=lerp_vec3(a.mag, b.mag, alpha))
    if isinstance(a, HeadPose):
        return HeadPose(position=lerp_vec3(a.position, b.position, alpha),
                        orientation=slerp(a.orientation, b.orientation, alpha))
    if isinstance(a, GazeRay):
        # direction is slerped as a unit vector (zero "w"), then renormalized
        d = slerp(a.direction + (0.0,), b.direction + (0.0,), alpha)
        return GazeRay(origin=lerp_vec3(a.origin, b.origin, alpha),
                       direction=_normalize_vec3(d[:3]),
                       confidence=a.confidence + (b.confidence - a.confidence) * alpha)
    raise BlendUnsupportedError(
        f"payload kind {type(a).__name__} has no linear blend")


def interpolate_linear(s1: tuple[Timestamp, Any], s2: tuple[Timestamp, Any],
                       t: Timestamp, max_gap: Duration):
    """Interpolate between a bracketing pair at time t.

    A time equal to an endpoint returns that endpoint's payload object
    unchanged (bit-exact). Returns NO_BRACKET when the pair is wider than
    max_gap.
    """
    t1, p1 = s1
    t2, p2 = s2
    if not (t1 <= t <= t2):
        raise ValueError(f"{t} is not bracketed by [{t1}, {t2}]")
    if (t2 - t1) > max_gap:
        return NO_BRACKET
    if t == t1:
        return p1
    if t == t2:
        return p2
    _require_blendable(type(p1))
    alpha = (t - t1).ticks / (t2 - t1).ticks
    return blend_payload(p1, p2, alpha)


class FusedTuple(NamedTuple):
    """One primary message joined with one value per secondary."""

    primary: Message
    values: tuple[Any, ...]

    @property
    def time(self) -> Timestamp:
        return self.primary.envelope.originating_time


def _ordered(stream: Iterable[Message], label: str) -> Iterator[Message]:
    last = None
    for message in stream:
        t = message.envelope.originating_time
        if last is not None and t <= last:
            raise UnorderedInputError(
                f"{label} input not strictly increasing at {t}")
        last = t
        yield message


_EXHAUSTED = _Sentinel("_EXHAUSTED")
_MISS = _Sentinel("_MISS")


class _NearestMatcher:
    """Streaming nearest-within-window matcher over one secondary stream.

    match() must be called with strictly increasing query times; each call
    is finalized only after the secondary has advanced past t + after (or
    ended), so online results equal offline results.
    """

    def __init__(self, secondary: Iterable[Message], window: ToleranceWindow,
                 tie: Tie):
        self._it = _ordered(secondary, "secondary")
        self._window = window
        self._tie = tie
        self._buffer: list[Message] = []
        self._exhausted = False
        self.last_time: Optional[int] = None

    def _pull(self) -> bool:
        if self._exhausted:
            return False
        nxt = next(self._it, _EXHAUSTED)
        if nxt is _EXHAUSTED:
            self._exhausted = True
            return False
        self._buffer.append(nxt)
        self.last_time = nxt.envelope.originating_time.ticks
        return True

    def match(self, t: Timestamp):
        lo = t.ticks - self._window.before.ticks
        hi = t.ticks + self._window.after.ticks
        while (self.last_time is None or self.last_time <= hi) and self._pull():
            pass
        buffer = self._buffer
        # evict entries that can never match this or any later query
        drop = 0
        while drop < len(buffer) and \
                buffer[drop].envelope.originating_time.ticks < lo:
            drop += 1
        if drop:
            del buffer[:drop]
        best = None
        best_dist = None
        for message in buffer:
            ts = message.envelope.originating_time.ticks
            if ts > hi:
                break
            dist = abs(ts - t.ticks)
            if best_dist is None or dist < best_dist or \
                    (dist == best_dist and self._tie is Tie.LATER):
                best = message
                best_dist = dist
        return _MISS if best is None else best


class _LinearMatcher:
    """Streaming bracketing matcher producing blended payloads."""

    def __init__(self, secondary: Iterable[Message], max_gap: Duration,
                 payload_type: Optional[type] = None):
        self._it = _ordered(secondary, "secondary")
        self._max_gap = max_gap
        self._prev: Optional[Message] = None   # last message with time <= t
        self._next: Optional[Message] = None   # first message with time > t
        self._exhausted = False
        self.last_time: Optional[int] = None
        self._checked = payload_type is not None
        if payload_type is not None:
            _require_blendable(payload_type)

    def _pull(self) -> Optional[Message]:
        if self._exhausted:
            return None
        nxt = next(self._it, None)
        if nxt is None:
            self._exhausted = True
            return None
        self.last_time = nxt.envelope.originating_time.ticks
        if not self._checked:
            _require_blendable(type(nxt.payload))
            self._checked = True
        return nxt

    def match(self, t: Timestamp):
        # advance so that _prev.time <= t < _next.time
        while self._next is None or \
                self._next.envelope.originating_time <= t:
            if self._next is not None:
                self._prev = self._next
                self._next = None
            pulled = self._pull()
            if pulled is None:
                break
            if pulled.envelope.originating_time <= t:
                self._prev = pulled
            else:
                self._next = pulled
        prev = self._prev
        if prev is None:
            return _MISS
        t_prev = prev.envelope.originating_time
        if t_prev == t:
            return prev.payload
        if self._next is None:
            return _MISS  # no extrapolation past the stream end
        t_next = self._next.envelope.originating_time
        result = interpolate_linear((t_prev, prev.payload),
                                    (t_next, self._next.payload),
                                    t, self._max_gap)
        return _MISS if result is NO_BRACKET else result


def _make_matcher(secondary: Iterable[Message], interp: Interpolator):
    if interp.kind is InterpKind.EXACT:
        return _NearestMatcher(secondary, ZERO_WINDOW, interp.tie)
    if interp.kind is InterpKind.NEAREST:
        return _NearestMatcher(secondary, interp.window, interp.tie)
    if interp.kind is InterpKind.LINEAR:
        assert interp.max_gap is not None
        return _LinearMatcher(secondary, interp.max_gap)
    raise ValueError(f"unknown interpolator kind {interp.kind}")


def join_nearest(primary: Iterable[Message], secondary: Iterable[Message],
                 window: ToleranceWindow, tie: Tie = Tie.EARLIER,
                 miss: Miss = Miss.DROP,
                 ) -> Iterator[tuple[Message, Any]]:
    """Pair each primary message with its nearest in-window secondary.

    For a primary at time t the candidate set is every secondary in
    [t - before, t + after]; the closest wins and equidistant candidates
    resolve by the tie rule. Misses are dropped or emitted with ABSENT.
    """
    matcher = _NearestMatcher(secondary, window, tie)
    for p in _ordered(primary, "primary"):
        m = matcher.match(p.envelope.originating_time)
        if m is _MISS:
            if miss is Miss.EMIT_ABSENT:
                yield (p, ABSENT)
        else:
            yield (p, m)


def join_exact(primary: Iterable[Message], secondary: Iterable[Message],
               ) -> Iterator[tuple[Message, Message]]:
    """Pair messages whose originating times are equal.

    Equivalent to join_nearest with a zero window and Drop misses.
    """
    return join_nearest(primary, secondary, ZERO_WINDOW)


def fuse(primary: Iterable[Message],
         secondaries: list[tuple[Iterable[Message], Interpolator]],
         ) -> Iterator[FusedTuple]:
    """Join many secondaries onto a primary stream.

    Emits one tuple per primary message that satisfies every Drop-policy
    secondary; EmitAbsent secondaries contribute ABSENT on a miss. Output
    keeps the primary's time axis and ordering.
    """
    matchers = [(_make_matcher(stream, interp), interp.miss)
                for stream, interp in secondaries]
    for p in _ordered(primary, "primary"):
        t = p.envelope.originating_time
        values = []
        alive = True
        for matcher, miss in matchers:
            m = matcher.match(t)
            if m is _MISS:
                if miss is Miss.DROP:
                    alive = False
                values.append(ABSENT)
            else:
                values.append(m.payload if isinstance(m, Message) else m)
        if alive:
            yield FusedTuple(primary=p, values=tuple(values))


def resample(stream: Iterable[Message], period: Duration, interp: Interpolator,
             t_start: Timestamp) -> Iterator[tuple[Timestamp, Any]]:
    """Produce values on the uniform grid t_start + k*period.

    Grid points outside the stream's [first, last] time span are not
    emitted; misses inside the span follow the interpolator's miss policy.
    """
    if period.ticks <= 0:
        raise ValueError("resample period must be positive")
    messages = list(_ordered(stream, "resample"))
    if interp.kind is InterpKind.LINEAR and messages:
        _require_blendable(type(messages[0].payload))
    if not messages:
        return
    first = messages[0].envelope.originating_time.ticks
    last = messages[-1].envelope.originating_time.ticks
    if t_start.ticks > last:
        return
    k = 0
    if t_start.ticks < first:
        k = -((t_start.ticks - first) // period.ticks)  # ceil division
    matcher = _make_matcher(iter(messages), interp)
    t_ticks = t_start.ticks + k * period.ticks
    while t_ticks <= last:
        t = Timestamp(t_ticks)
        m = matcher.match(t)
        if m is _MISS:
            if interp.miss is Miss.EMIT_ABSENT:
                yield (t, ABSENT)
        else:
            yield (t, m.payload if isinstance(m, Message) else m)
        k += 1
        t_ticks = t_start.ticks + k * period.ticks
