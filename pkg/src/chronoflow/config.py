"""Scenario configuration: the file format that describes a capture.

JSON and TOML are both accepted (picked by file suffix). Schema:

    {
      "pipeline": {"mode": "virtual" | "live",
                   "store_root": "sessions",      # optional
                   "epoch_ticks": 0},             # optional, virtual only
      "streams": [
        {"name": "imu", "type": "imu", "rate_hz": 200,
         "jitter_us": 0, "latency_us": [500, 2500], "seed": 105,
         "params": {}},
        ...
      ]
    }

rate_hz accepts integers, decimal strings, or "num/den" rationals
("30000/1001"); kind-specific parameters may sit in "params" or inline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional, Union

from chronoflow.errors import ConfigError
from chronoflow.pipeline import PipelineMode
from chronoflow.simsource import SimSourceConfig, default_scenario

_STREAM_KEYS = {"name", "type", "rate_hz", "jitter_us", "latency_us", "seed",
                "params"}


@dataclass(frozen=True)
class ScenarioConfig:
    mode: PipelineMode
    sources: tuple[SimSourceConfig, ...]
    store_root: Optional[Path] = None
    epoch_ticks: int = 0

    def __post_init__(self):
        names = [s.name for s in self.sources]
        duplicates = {n for n in names if names.count(n) > 1}
        if duplicates:
            raise ConfigError(f"duplicate stream names: {sorted(duplicates)}")


def default_scenario_config(mode: PipelineMode = PipelineMode.VIRTUAL,
                            store_root: Optional[Path] = None) -> ScenarioConfig:
    return ScenarioConfig(mode=mode, sources=tuple(default_scenario()),
                          store_root=store_root)


def _parse_rate(value: Any, name: str) -> Fraction:
    try:
        if isinstance(value, bool):
            raise TypeError
        if isinstance(value, int):
            return Fraction(value)
        if isinstance(value, float):
            return Fraction(str(value))
        if isinstance(value, str):
            return Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError):
        pass
    raise ConfigError(f"stream {name!r}: cannot parse rate_hz {value!r}")


def _parse_stream(raw: dict[str, Any]) -> SimSourceConfig:
    if "name" not in raw or "type" not in raw:
        raise ConfigError(f"stream entry needs 'name' and 'type': {raw!r}")
    name = raw["name"]
    latency = raw.get("latency_us", [0, 0])
    if isinstance(latency, int):
        latency = [latency, latency]
    if not (isinstance(latency, (list, tuple)) and len(latency) == 2):
        raise ConfigError(f"stream {name!r}: latency_us must be [min, max]")
    params = dict(raw.get("params", {}))
    for key, value in raw.items():
        if key not in _STREAM_KEYS:
            params[key] = value
    return SimSourceConfig(
        name=name,
        kind=raw["type"],
        rate_hz=_parse_rate(raw.get("rate_hz", 0), name),
        jitter_us=int(raw.get("jitter_us", 0)),
        latency_us=(int(latency[0]), int(latency[1])),
        seed=int(raw.get("seed", 0)),
        params=params,
    )


def scenario_from_dict(raw: dict[str, Any]) -> ScenarioConfig:
    pipeline = raw.get("pipeline", {})
    mode_name = pipeline.get("mode", "virtual")
    try:
        mode = PipelineMode(mode_name)
    except ValueError:
        raise ConfigError(f"unknown pipeline mode {mode_name!r}") from None
    store_root = pipeline.get("store_root")
    streams = raw.get("streams")
    if not isinstance(streams, list) or not streams:
        raise ConfigError("scenario needs a non-empty 'streams' list")
    return ScenarioConfig(
        mode=mode,
        sources=tuple(_parse_stream(s) for s in streams),
        store_root=Path(store_root) if store_root else None,
        epoch_ticks=int(pipeline.get("epoch_ticks", 0)),
    )


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file {path} does not exist")
    if path.suffix == ".toml":
        try:
            import tomllib  # py311+
        except ImportError:
            import tomli as tomllib
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    elif path.suffix == ".json":
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    else:
        raise ConfigError(f"scenario file {path} must be .json or .toml")
    return scenario_from_dict(raw)


def scenario_to_dict(config: ScenarioConfig) -> dict[str, Any]:
    """Inverse of scenario_from_dict (useful for generating example files)."""
    return {
        "pipeline": {
            "mode": config.mode.value,
            **({"store_root": str(config.store_root)} if config.store_root else {}),
            **({"epoch_ticks": config.epoch_ticks} if config.epoch_ticks else {}),
        },
        "streams": [
            {
                "name": s.name,
                "type": s.kind,
                "rate_hz": (s.rate_hz.numerator if s.rate_hz.denominator == 1
                            else str(s.rate_hz)),
                "jitter_us": s.jitter_us,
                "latency_us": list(s.latency_us),
                "seed": s.seed,
                **({"params": dict(s.params)} if s.params else {}),
            }
            for s in config.sources
        ],
    }
