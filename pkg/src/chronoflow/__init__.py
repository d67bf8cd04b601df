"""chronoflow: temporally-synchronized multimodal sensor streaming.

Captures heterogeneous (simulated) sensor streams with source timestamps,
fuses them with tolerance-window temporal joins, persists them in a
deterministic binary store, replays them bit-exactly, and serves them over
TCP with clock-offset estimation.
"""

from chronoflow.config import (
    ScenarioConfig,
    default_scenario_config,
    load_scenario,
)
from chronoflow.controller import CaptureController, create_default_controller
from chronoflow.messages import (
    AudioFrame,
    DepthFrame,
    Envelope,
    GazeRay,
    HandFrame,
    HeadPose,
    ImuSample,
    Message,
    StreamMetadata,
    VideoFrame,
)
from chronoflow.pipeline import DeliveryPolicy, Pipeline, PipelineMode
from chronoflow.simsource import SimSource, SimSourceConfig, default_scenario
from chronoflow.store import MAX_SPEED, StoreReader, StoreWriter, replay
from chronoflow.syncops import (
    Interpolator,
    Miss,
    Tie,
    ToleranceWindow,
    fuse,
    join_exact,
    join_nearest,
    resample,
)
from chronoflow.timebase import (
    Clock,
    Duration,
    LiveClock,
    Timestamp,
    VirtualClock,
    estimate_offset,
)

__version__ = "0.1.0"

__all__ = [
    "AudioFrame", "CaptureController", "Clock", "DeliveryPolicy", "DepthFrame",
    "Duration", "Envelope", "GazeRay", "HandFrame", "HeadPose", "ImuSample",
    "Interpolator", "LiveClock", "MAX_SPEED", "Message", "Miss", "Pipeline",
    "PipelineMode", "ScenarioConfig", "SimSource", "SimSourceConfig",
    "StoreReader", "StoreWriter", "StreamMetadata", "Tie", "Timestamp",
    "ToleranceWindow", "VideoFrame", "VirtualClock", "create_default_controller",
    "default_scenario", "default_scenario_config", "estimate_offset", "fuse",
    "join_exact", "join_nearest", "load_scenario", "replay", "resample",
]
