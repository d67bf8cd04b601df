"""Bit-exact binary codecs for every payload type.

One layout serves both the on-disk store and the network protocol: all
multi-byte values little-endian, sensor scalars IEEE-754 binary32, fixed
fields in declaration order, blobs preceded by the counts that determine
their length. Identical payloads always encode to identical bytes.

Applications may register additional payload kinds with type_id >= 1000;
ids below 1000 are reserved for the built-in sensor set.
"""

from __future__ import annotations

import math
import struct
from typing import Any, Callable, NamedTuple

from chronoflow.errors import (
    PayloadInvariantError,
    PayloadLengthError,
    UnknownPayloadTypeError,
)
from chronoflow.messages import (
    HAND_JOINT_COUNT,
    QUAT_NORM_TOLERANCE,
    UNIT_NORM_TOLERANCE,
    AudioFrame,
    DepthFrame,
    GazeRay,
    HandFrame,
    Handedness,
    HeadPose,
    ImuSample,
    PayloadType,
    PixelFormat,
    DepthMode,
    VideoFrame,
    quat_norm,
    vec_norm,
)

APPLICATION_TYPE_ID_BASE = 1000

_IMU = struct.Struct("<9f")
_HEAD_POSE = struct.Struct("<7f")
_GAZE = struct.Struct("<7f")
_HAND_HEADER = struct.Struct("<BB")
_HAND_JOINTS = struct.Struct(f"<{HAND_JOINT_COUNT * 7}f")
_AUDIO_HEADER = struct.Struct("<IHHI")
_DEPTH_HEADER = struct.Struct("<BHH")
_VIDEO_HEADER = struct.Struct("<HHB")


def _require_finite(values, what: str) -> None:
    for v in values:
        if not math.isfinite(v):
            raise PayloadInvariantError(f"{what} contains non-finite value {v!r}")


def _check_unit(norm: float, what: str) -> None:
    if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
        raise PayloadInvariantError(f"{what} norm {norm:.6f} not within "
                                    f"{UNIT_NORM_TOLERANCE} of 1")


def _encode_imu(p: ImuSample) -> bytes:
    _require_finite(p.accel + p.gyro + p.mag, "ImuSample")
    return _IMU.pack(*p.accel, *p.gyro, *p.mag)


def _decode_imu(data: bytes) -> ImuSample:
    v = _IMU.unpack(data)
    _require_finite(v, "ImuSample")
    return ImuSample(accel=v[0:3], gyro=v[3:6], mag=v[6:9])


def _encode_head_pose(p: HeadPose) -> bytes:
    _require_finite(p.position + p.orientation, "HeadPose")
    _check_unit(quat_norm(p.orientation), "HeadPose orientation")
    return _HEAD_POSE.pack(*p.position, *p.orientation)


def _decode_head_pose(data: bytes) -> HeadPose:
    v = _HEAD_POSE.unpack(data)
    _require_finite(v, "HeadPose")
    _check_unit(quat_norm(v[3:7]), "HeadPose orientation")
    return HeadPose(position=v[0:3], orientation=v[3:7])


def _encode_gaze(p: GazeRay) -> bytes:
    _require_finite(p.origin + p.direction + (p.confidence,), "GazeRay")
    _check_unit(vec_norm(p.direction), "GazeRay direction")
    if not 0.0 <= p.confidence <= 1.0:
        raise PayloadInvariantError(f"GazeRay confidence {p.confidence} outside [0, 1]")
    return _GAZE.pack(*p.origin, *p.direction, p.confidence)


def _decode_gaze(data: bytes) -> GazeRay:
    v = _GAZE.unpack(data)
    _require_finite(v, "GazeRay")
    _check_unit(vec_norm(v[3:6]), "GazeRay direction")
    if not 0.0 <= v[6] <= 1.0:
        raise PayloadInvariantError(f"GazeRay confidence {v[6]} outside [0, 1]")
    return GazeRay(origin=v[0:3], direction=v[3:6], confidence=v[6])


def _encode_hand(p: HandFrame) -> bytes:
    if len(p.joints) != HAND_JOINT_COUNT:
        raise PayloadInvariantError(
            f"HandFrame requires exactly {HAND_JOINT_COUNT} joints, got {len(p.joints)}")
    flat: list[float] = []
    for joint in p.joints:
        _require_finite(joint, "HandFrame joint")
        if p.tracked:
            _check_unit(quat_norm(joint[3:7]), "HandFrame joint orientation")
        flat.extend(joint)
    return _HAND_HEADER.pack(int(p.handedness), int(p.tracked)) + _HAND_JOINTS.pack(*flat)


def _decode_hand(data: bytes) -> HandFrame:
    handed, tracked = _HAND_HEADER.unpack_from(data, 0)
    if handed not in (0, 1) or tracked not in (0, 1):
        raise PayloadInvariantError("HandFrame header flags out of range")
    flat = _HAND_JOINTS.unpack_from(data, _HAND_HEADER.size)
    joints = tuple(flat[i:i + 7] for i in range(0, len(flat), 7))
    frame = HandFrame(handedness=Handedness(handed), tracked=bool(tracked), joints=joints)
    if frame.tracked:
        for joint in joints:
            _check_unit(quat_norm(joint[3:7]), "HandFrame joint orientation")
    return frame


def _encode_audio(p: AudioFrame) -> bytes:
    if p.bits_per_sample != 16:
        raise PayloadInvariantError("AudioFrame bits_per_sample is fixed at 16")
    expected = p.sample_count * p.channels * 2
    if len(p.pcm) != expected:
        raise PayloadInvariantError(
            f"AudioFrame pcm length {len(p.pcm)} != {expected} "
            f"({p.sample_count} samples x {p.channels} ch x 2 bytes)")
    return _AUDIO_HEADER.pack(p.sample_rate_hz, p.channels, p.bits_per_sample,
                              p.sample_count) + p.pcm


def _decode_audio(data: bytes) -> AudioFrame:
    if len(data) < _AUDIO_HEADER.size:
        raise PayloadLengthError(
            f"AudioFrame needs at least {_AUDIO_HEADER.size} bytes, got {len(data)}")
    rate, channels, bits, count = _AUDIO_HEADER.unpack_from(data, 0)
    pcm = data[_AUDIO_HEADER.size:]
    if bits != 16:
        raise PayloadInvariantError("AudioFrame bits_per_sample is fixed at 16")
    if len(pcm) != count * channels * 2:
        raise PayloadLengthError(
            f"AudioFrame pcm length {len(pcm)} != {count * channels * 2}")
    return AudioFrame(sample_rate_hz=rate, channels=channels, bits_per_sample=bits,
                      sample_count=count, pcm=pcm)


def _encode_depth(p: DepthFrame) -> bytes:
    expected = p.width * p.height * 2
    if len(p.depth_mm) != expected:
        raise PayloadInvariantError(
            f"DepthFrame blob length {len(p.depth_mm)} != {expected} "
            f"({p.width}x{p.height} u16)")
    return _DEPTH_HEADER.pack(int(p.mode), p.width, p.height) + p.depth_mm


def _decode_depth(data: bytes) -> DepthFrame:
    if len(data) < _DEPTH_HEADER.size:
        raise PayloadLengthError(
            f"DepthFrame needs at least {_DEPTH_HEADER.size} bytes, got {len(data)}")
    mode, width, height = _DEPTH_HEADER.unpack_from(data, 0)
    if mode not in (0, 1):
        raise PayloadInvariantError(f"DepthFrame mode {mode} out of range")
    blob = data[_DEPTH_HEADER.size:]
    if len(blob) != width * height * 2:
        raise PayloadLengthError(
            f"DepthFrame blob length {len(blob)} != {width * height * 2}")
    return DepthFrame(mode=DepthMode(mode), width=width, height=height, depth_mm=blob)


def _encode_video(p: VideoFrame) -> bytes:
    expected = p.width * p.height * p.format.bytes_per_pixel
    if len(p.pixels) != expected:
        raise PayloadInvariantError(
            f"VideoFrame blob length {len(p.pixels)} != {expected}")
    return _VIDEO_HEADER.pack(p.width, p.height, int(p.format)) + p.pixels


def _decode_video(data: bytes) -> VideoFrame:
    if len(data) < _VIDEO_HEADER.size:
        raise PayloadLengthError(
            f"VideoFrame needs at least {_VIDEO_HEADER.size} bytes, got {len(data)}")
    width, height, fmt = _VIDEO_HEADER.unpack_from(data, 0)
    if fmt not in (0, 1):
        raise PayloadInvariantError(f"VideoFrame format {fmt} out of range")
    pixels = data[_VIDEO_HEADER.size:]
    fmt = PixelFormat(fmt)
    if len(pixels) != width * height * fmt.bytes_per_pixel:
        raise PayloadLengthError(
            f"VideoFrame blob length {len(pixels)} != "
            f"{width * height * fmt.bytes_per_pixel}")
    return VideoFrame(width=width, height=height, format=fmt, pixels=pixels)


class PayloadCodec(NamedTuple):
    type_id: int
    name: str
    payload_type: type
    encode: Callable[[Any], bytes]
    decode: Callable[[bytes], Any]
    fixed_size: int | None  # exact encoded size, None when blob-bearing


_CODECS: dict[int, PayloadCodec] = {}
_CODEC_BY_TYPE: dict[type, PayloadCodec] = {}


def _register(codec: PayloadCodec) -> None:
    if codec.type_id in _CODECS:
        raise ValueError(f"type_id {codec.type_id} already registered")
    if codec.payload_type in _CODEC_BY_TYPE:
        raise ValueError(f"payload type {codec.payload_type.__name__} already registered")
    _CODECS[codec.type_id] = codec
    _CODEC_BY_TYPE[codec.payload_type] = codec


def register_payload_codec(codec: PayloadCodec) -> None:
    """Register an application-defined payload kind (type_id >= 1000)."""
    if codec.type_id < APPLICATION_TYPE_ID_BASE:
        raise ValueError(
            f"application type_ids start at {APPLICATION_TYPE_ID_BASE}, "
            f"got {codec.type_id}")
    _register(codec)


for _codec in (
    PayloadCodec(PayloadType.IMU, "imu", ImuSample, _encode_imu, _decode_imu, _IMU.size),
    PayloadCodec(PayloadType.HEAD_POSE, "head_pose", HeadPose,
                 _encode_head_pose, _decode_head_pose, _HEAD_POSE.size),
    PayloadCodec(PayloadType.GAZE_RAY, "gaze_ray", GazeRay,
                 _encode_gaze, _decode_gaze, _GAZE.size),
    PayloadCodec(PayloadType.HAND_FRAME, "hand_frame", HandFrame,
                 _encode_hand, _decode_hand, _HAND_HEADER.size + _HAND_JOINTS.size),
    PayloadCodec(PayloadType.AUDIO_FRAME, "audio_frame", AudioFrame,
                 _encode_audio, _decode_audio, None),
    PayloadCodec(PayloadType.DEPTH_FRAME, "depth_frame", DepthFrame,
                 _encode_depth, _decode_depth, None),
    PayloadCodec(PayloadType.VIDEO_FRAME, "video_frame", VideoFrame,
                 _encode_video, _decode_video, None),
):
    _register(_codec)


def codec_for_type_id(type_id: int) -> PayloadCodec:
    try:
        return _CODECS[type_id]
    except KeyError:
        raise UnknownPayloadTypeError(type_id) from None


def codec_for_payload(payload: Any) -> PayloadCodec:
    try:
        return _CODEC_BY_TYPE[type(payload)]
    except KeyError:
        raise UnknownPayloadTypeError(-1) from None


def encode_payload(payload: Any) -> bytes:
    """Encode a typed payload to its deterministic wire/disk bytes."""
    return codec_for_payload(payload).encode(payload)


def decode_payload(type_id: int, data: bytes) -> Any:
    """Exact inverse of encode_payload on valid input.

    Unknown type ids, length mismatches, and decoded-invariant violations
    are reported as distinct error types.
    """
    codec = codec_for_type_id(type_id)
    if codec.fixed_size is not None and len(data) != codec.fixed_size:
        raise PayloadLengthError(
            f"{codec.name} payload must be {codec.fixed_size} bytes, got {len(data)}")
    return codec.decode(data)
