"""Command-line front end: record, replay, inspect, stat, export, serve."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from chronoflow.config import default_scenario_config, load_scenario
from chronoflow.controller import CaptureController
from chronoflow.codecs import codec_for_type_id
from chronoflow.errors import ChronoflowError
from chronoflow.messages import (
    AudioFrame,
    DepthFrame,
    GazeRay,
    HandFrame,
    HeadPose,
    ImuSample,
    VideoFrame,
)
from chronoflow.netstream import DEFAULT_PORT, LiveTap, StreamServer
from chronoflow.pipeline import PipelineMode
from chronoflow.service import CaptureService
from chronoflow.store import MAX_SPEED, StoreReader, derive_session_id, replay
from chronoflow.syncops import Interpolator, ToleranceWindow, resample
from chronoflow.timebase import TICKS_PER_SECOND, Duration, Timestamp


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _print_counts(catalog: dict) -> None:
    width = max(len(s["name"]) for s in catalog["streams"])
    total = 0
    for s in catalog["streams"]:
        print(f"  {s['name']:<{width}}  {s['message_count']:>8}")
        total += s["message_count"]
    print(f"  {'total':<{width}}  {total:>8}")


def cmd_record(args) -> int:
    scenario = (load_scenario(args.config) if args.config
                else default_scenario_config())
    duration = Duration(int(round(args.duration * TICKS_PER_SECOND)))
    out = Path(args.out)
    session_name = args.session or out.name or "session"
    controller = CaptureController(scenario)
    if scenario.mode is PipelineMode.VIRTUAL:
        catalog = controller.run_virtual_session(session_name, duration,
                                                 store_path=out)
    else:
        controller.start_capture(session_name, store_path=out)
        time.sleep(duration.to_seconds())
        catalog = controller.stop_capture()
    print(f"recorded session {session_name!r} -> {out}")
    _print_counts(catalog)
    return 0


def _parse_speed(raw: str):
    if raw.lower() == "max":
        return MAX_SPEED
    speed = float(Fraction(raw))
    if speed <= 0:
        raise ValueError("speed must be positive")
    return speed


def cmd_replay(args) -> int:
    store = Path(args.store)
    if args.serve:
        host, port = _parse_addr(args.serve)
        with StreamServer.for_store(store, host=host, port=port) as server:
            print(f"serving {store} on {server.host}:{server.port} "
                  f"(ctrl-c to stop)")
            try:
                while True:
                    time.sleep(0.5)
            except KeyboardInterrupt:
                return 0
    speed = _parse_speed(args.speed)
    counted = 0

    def sink(_message):
        nonlocal counted
        counted += 1

    with StoreReader(store) as reader:
        report = replay(reader, sink, speed=speed)
    pacing_ms = report.max_pacing_error.ticks / 10_000
    print(f"replayed {report.message_count} messages in "
          f"{report.wall_seconds:.3f}s (max pacing error {pacing_ms:.3f} ms)")
    return 0


def cmd_inspect(args) -> int:
    with StoreReader(Path(args.store)) as reader:
        catalog = reader.catalog
        print(f"session {catalog['session_name']!r} "
              f"(id {catalog['session_id']}, created {catalog['created_utc']})")
        print(f"{'id':>3} {'name':<18} {'type':>4} {'count':>8} "
              f"{'first':>16} {'last':>16}")
        for s in catalog["streams"]:
            first = s["first_originating_time"]
            last = s["last_originating_time"]
            print(f"{s['id']:>3} {s['name']:<18} {s['type_id']:>4} "
                  f"{s['message_count']:>8} "
                  f"{first if first is not None else '-':>16} "
                  f"{last if last is not None else '-':>16}")
        checked = reader.verify_index()
        print(f"integrity: {checked} records verified")
    return 0


def cmd_stat(args) -> int:
    with StoreReader(Path(args.store)) as reader:
        catalog = reader.catalog
        names = {s["id"]: s["name"] for s in catalog["streams"]}
        times: dict[int, list[int]] = {sid: [] for sid in names}
        latency: dict[int, list[int]] = {sid: [] for sid in names}
        for envelope, _length, _offset in reader.scan_headers():
            times[envelope.stream_id].append(envelope.originating_time.ticks)
            latency[envelope.stream_id].append(
                envelope.creation_time.ticks - envelope.originating_time.ticks)

        print(f"session {catalog['session_name']!r}: "
              f"{sum(len(v) for v in times.values())} messages")
        print("\nper-stream source latency (creation - originating):")
        for sid, name in names.items():
            lat = latency[sid]
            if lat:
                print(f"  {name:<18} mean {sum(lat) / len(lat) / 10_000:8.3f} ms  "
                      f"max {max(lat) / 10_000:8.3f} ms")
            else:
                print(f"  {name:<18} (no messages)")

        print("\ninter-stream skew: nearest-neighbor |dt| from row stream to "
              "column stream, max/mean ms:")
        ids = [sid for sid in names if times[sid]]
        for a in ids:
            row = []
            a_times = np.array(times[a], dtype=np.int64)
            for b in ids:
                if a == b:
                    row.append("      -      ")
                    continue
                deltas = _nearest_deltas(a_times, np.array(times[b],
                                                           dtype=np.int64))
                row.append(f"{deltas.max() / 10_000:6.3f}/"
                           f"{deltas.mean() / 10_000:6.3f}")
            print(f"  {names[a]:<18} " + " ".join(row))
    return 0


def _nearest_deltas(a_times: np.ndarray, b_times: np.ndarray) -> np.ndarray:
    """For each time in a, distance to the nearest time in b (ticks)."""
    idx = np.searchsorted(b_times, a_times)
    left = b_times[np.clip(idx - 1, 0, len(b_times) - 1)]
    right = b_times[np.clip(idx, 0, len(b_times) - 1)]
    return np.minimum(np.abs(a_times - left), np.abs(a_times - right))


_FLATTENERS = {
    ImuSample: (lambda p: {
        "accel_x": p.accel[0], "accel_y": p.accel[1], "accel_z": p.accel[2],
        "gyro_x": p.gyro[0], "gyro_y": p.gyro[1], "gyro_z": p.gyro[2],
        "mag_x": p.mag[0], "mag_y": p.mag[1], "mag_z": p.mag[2]}),
    HeadPose: (lambda p: {
        "pos_x": p.position[0], "pos_y": p.position[1], "pos_z": p.position[2],
        "quat_x": p.orientation[0], "quat_y": p.orientation[1],
        "quat_z": p.orientation[2], "quat_w": p.orientation[3]}),
    GazeRay: (lambda p: {
        "origin_x": p.origin[0], "origin_y": p.origin[1], "origin_z": p.origin[2],
        "dir_x": p.direction[0], "dir_y": p.direction[1], "dir_z": p.direction[2],
        "confidence": p.confidence}),
}


def _flatten_hand(p: HandFrame) -> dict:
    row = {"handedness": p.handedness.name.lower(), "tracked": int(p.tracked)}
    for i, joint in enumerate(p.joints):
        for field, value in zip(("px", "py", "pz", "qx", "qy", "qz", "qw"), joint):
            row[f"joint{i:02d}_{field}"] = value
    return row


def _flatten_blob(prefix: str, blob: bytes) -> dict:
    return {f"{prefix}_len": len(blob),
            f"{prefix}_sha256": hashlib.sha256(blob).hexdigest()}


def flatten_payload(payload) -> dict:
    flattener = _FLATTENERS.get(type(payload))
    if flattener:
        return flattener(payload)
    if isinstance(payload, HandFrame):
        return _flatten_hand(payload)
    if isinstance(payload, AudioFrame):
        return {"sample_rate_hz": payload.sample_rate_hz,
                "channels": payload.channels,
                "bits_per_sample": payload.bits_per_sample,
                "sample_count": payload.sample_count,
                **_flatten_blob("pcm", payload.pcm)}
    if isinstance(payload, DepthFrame):
        return {"mode": payload.mode.name.lower(), "width": payload.width,
                "height": payload.height,
                **_flatten_blob("depth_mm", payload.depth_mm)}
    if isinstance(payload, VideoFrame):
        return {"width": payload.width, "height": payload.height,
                "format": payload.format.name.lower(),
                **_flatten_blob("pixels", payload.pixels)}
    if isinstance(payload, (int, float)):
        return {"value": payload}
    raise ChronoflowError(f"cannot flatten payload kind {type(payload).__name__}")


def _parse_resample(raw: str, payload_type: type):
    """'<hz>:<interp>' -> (period, Interpolator). Interp defaults: a nearest
    window of half a period per side, a linear max gap of two periods."""
    try:
        rate_raw, _, interp_name = raw.partition(":")
        rate = Fraction(rate_raw)
        if rate <= 0:
            raise ValueError
    except (ValueError, ZeroDivisionError):
        raise ChronoflowError(f"bad resample spec {raw!r}, "
                              f"expected <hz>:<interp>") from None
    period = Duration(int(TICKS_PER_SECOND / rate))
    if interp_name in ("", "nearest"):
        interp = Interpolator.nearest(ToleranceWindow(period // 2, period // 2))
    elif interp_name == "exact":
        interp = Interpolator.exact()
    elif interp_name == "linear":
        interp = Interpolator.linear(period * 2, payload_type=payload_type)
    else:
        raise ChronoflowError(f"unknown interpolator {interp_name!r}")
    return period, interp


def cmd_export(args) -> int:
    store = Path(args.store)
    out_dir = Path(args.out) if args.out else store / "export"
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = args.streams.split(",") if args.streams else None
    written = []
    with StoreReader(store) as reader:
        for meta in reader.streams:
            if wanted is not None and meta.name not in wanted:
                continue
            codec = codec_for_type_id(meta.type_id)
            decoded = (m._replace(payload=codec.decode(m.payload))
                       for m in reader.read_merged(streams=[meta.name]))
            if args.resample:
                rows = _resampled_rows(decoded, args.resample, codec.payload_type)
            else:
                rows = ({"sequence": m.envelope.sequence,
                         "originating_time": m.envelope.originating_time.ticks,
                         "creation_time": m.envelope.creation_time.ticks,
                         **flatten_payload(m.payload)} for m in decoded)
            path = out_dir / f"{meta.name}.{args.format}"
            count = _write_rows(path, rows, args.format)
            written.append((meta.name, path, count))
    for name, path, count in written:
        print(f"  {name}: {count} rows -> {path}")
    return 0


def _resampled_rows(messages, spec: str, payload_type: type):
    first_batch = list(messages)
    if not first_batch:
        return iter(())
    period, interp = _parse_resample(spec, payload_type)
    t_start = first_batch[0].envelope.originating_time
    return ({"index": i, "originating_time": t.ticks, **flatten_payload(v)}
            for i, (t, v) in enumerate(resample(iter(first_batch), period,
                                                interp, t_start)))


def _write_rows(path: Path, rows, fmt: str) -> int:
    count = 0
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as f:
            for row in rows:
                f.write(json.dumps(row) + "\n")
                count += 1
    else:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = None
            for row in rows:
                if writer is None:
                    writer = csv.DictWriter(f, fieldnames=list(row))
                    writer.writeheader()
                writer.writerow(row)
                count += 1
    return count


def _parse_addr(raw: str) -> tuple[str, int]:
    host, _, port = raw.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_serve(args) -> int:
    scenario = (load_scenario(args.config) if args.config
                else default_scenario_config(mode=PipelineMode.LIVE))
    if scenario.mode is not PipelineMode.LIVE:
        return _fail("serve requires a live-mode scenario")
    http_host, http_port = _parse_addr(args.http)
    tcp_host, tcp_port = _parse_addr(args.tcp)
    tap = LiveTap()
    controller = CaptureController(scenario, store_root=Path(args.store_root),
                                   taps=[tap])
    directory = controller.streams()
    session_id = derive_session_id("live", directory)
    tcp_server = StreamServer(directory, session_id, host=tcp_host,
                              port=tcp_port, tap=tap)
    with CaptureService(controller, host=http_host, port=http_port) as service:
        with tcp_server:
            print(f"control http://{service.host}:{service.port}/v1  "
                  f"data tcp {tcp_server.host}:{tcp_server.port}  "
                  f"(ctrl-c to stop)")
            try:
                while True:
                    time.sleep(0.5)
            except KeyboardInterrupt:
                return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chronoflow",
        description="Deterministic multimodal capture, fusion, and replay.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("record", help="run a capture session into a store")
    p.add_argument("--config", help="scenario file (.json/.toml); "
                                    "defaults to the built-in virtual scenario")
    p.add_argument("--duration", type=float, required=True, help="seconds")
    p.add_argument("--out", required=True, help="store directory to create")
    p.add_argument("--session", help="session name (default: out dir name)")
    p.set_defaults(fn=cmd_record)

    p = sub.add_parser("replay", help="replay a store to a sink or the network")
    p.add_argument("--store", required=True)
    p.add_argument("--speed", default="max", help="playback speed factor or 'max'")
    p.add_argument("--serve", help="host:port to serve the store over TCP")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("inspect", help="print catalog and verify integrity")
    p.add_argument("--store", required=True)
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("stat", help="inter-stream skew and latency statistics")
    p.add_argument("--store", required=True)
    p.set_defaults(fn=cmd_stat)

    p = sub.add_parser("export", help="export streams to csv or jsonl")
    p.add_argument("--store", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--streams", help="comma-separated stream names (default all)")
    p.add_argument("--resample", help="<hz>:<exact|nearest|linear>")
    p.add_argument("--out", help="output directory (default <store>/export)")
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("serve", help="live capture service: HTTP control + TCP data")
    p.add_argument("--config", help="live scenario file")
    p.add_argument("--http", default="127.0.0.1:8080")
    p.add_argument("--tcp", default=f"127.0.0.1:{DEFAULT_PORT}")
    p.add_argument("--store-root", default="sessions")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ChronoflowError as exc:
        return _fail(str(exc))
    except OSError as exc:
        return _fail(f"I/O: {exc}")


if __name__ == "__main__":
    sys.exit(main())
