"""Shared hypothesis strategies for randomized payloads and envelopes."""

import math
import struct

from hypothesis import strategies as st

from chronoflow.messages import (
    HAND_JOINT_COUNT,
    AudioFrame,
    DepthFrame,
    DepthMode,
    GazeRay,
    HandFrame,
    Handedness,
    HeadPose,
    ImuSample,
    PixelFormat,
    VideoFrame,
)


def f32(value: float) -> float:
    """Round a double to its nearest binary32 value."""
    return struct.unpack("<f", struct.pack("<f", value))[0]


finite_f32 = st.floats(width=32, allow_nan=False, allow_infinity=False)
small_f32 = st.floats(min_value=-100.0, max_value=100.0, width=32)

vec3 = st.tuples(finite_f32, finite_f32, finite_f32)
small_vec3 = st.tuples(small_f32, small_f32, small_f32)


@st.composite
def unit_quats(draw):
    raw = draw(st.tuples(*[st.floats(min_value=-1.0, max_value=1.0) for _ in range(4)])
               .filter(lambda q: 0.1 < math.sqrt(sum(c * c for c in q)) < 2.0))
    norm = math.sqrt(sum(c * c for c in raw))
    return tuple(f32(c / norm) for c in raw)


@st.composite
def unit_vec3s(draw):
    raw = draw(st.tuples(*[st.floats(min_value=-1.0, max_value=1.0) for _ in range(3)])
               .filter(lambda v: 0.1 < math.sqrt(sum(c * c for c in v)) < 2.0))
    norm = math.sqrt(sum(c * c for c in raw))
    return tuple(f32(c / norm) for c in raw)


imu_samples = st.builds(ImuSample, accel=vec3, gyro=vec3, mag=vec3)

head_poses = st.builds(HeadPose, position=vec3, orientation=unit_quats())

gaze_rays = st.builds(
    GazeRay,
    origin=vec3,
    direction=unit_vec3s(),
    confidence=st.floats(min_value=0.0, max_value=1.0, width=32),
)


@st.composite
def hand_frames(draw):
    tracked = draw(st.booleans())
    joints = []
    for _ in range(HAND_JOINT_COUNT):
        pos = draw(small_vec3)
        quat = draw(unit_quats()) if tracked else draw(
            st.tuples(small_f32, small_f32, small_f32, small_f32))
        joints.append(pos + quat)
    return HandFrame(handedness=draw(st.sampled_from(list(Handedness))),
                     tracked=tracked, joints=tuple(joints))


@st.composite
def audio_frames(draw):
    channels = draw(st.integers(min_value=1, max_value=2))
    count = draw(st.integers(min_value=0, max_value=64))
    pcm = draw(st.binary(min_size=count * channels * 2, max_size=count * channels * 2))
    return AudioFrame(sample_rate_hz=48_000, channels=channels,
                      bits_per_sample=16, sample_count=count, pcm=pcm)


@st.composite
def depth_frames(draw):
    width = draw(st.integers(min_value=0, max_value=32))
    height = draw(st.integers(min_value=0, max_value=32))
    blob = draw(st.binary(min_size=width * height * 2, max_size=width * height * 2))
    return DepthFrame(mode=draw(st.sampled_from(list(DepthMode))),
                      width=width, height=height, depth_mm=blob)


@st.composite
def video_frames(draw):
    fmt = draw(st.sampled_from(list(PixelFormat)))
    width = draw(st.integers(min_value=0, max_value=32))
    height = draw(st.integers(min_value=0, max_value=32))
    size = width * height * fmt.bytes_per_pixel
    pixels = draw(st.binary(min_size=size, max_size=size))
    return VideoFrame(width=width, height=height, format=fmt, pixels=pixels)


any_payload = st.one_of(imu_samples, head_poses, gaze_rays, hand_frames(),
                        audio_frames(), depth_frames(), video_frames())
