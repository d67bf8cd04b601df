import json
import time
import urllib.error
import urllib.request
from fractions import Fraction

import pytest

from chronoflow.config import ScenarioConfig, default_scenario_config
from chronoflow.controller import CaptureController
from chronoflow.pipeline import PipelineMode
from chronoflow.service import CaptureService
from chronoflow.simsource import SimSourceConfig
from chronoflow.store import StoreReader


def light_scenario(mode=PipelineMode.LIVE):
    return ScenarioConfig(mode=mode, sources=(
        SimSourceConfig("imu", "imu", Fraction(200), seed=1),
        SimSourceConfig("eye_gaze", "gaze", Fraction(30), seed=2),
    ))


@pytest.fixture
def live_service(tmp_path):
    controller = CaptureController(light_scenario(), store_root=tmp_path)
    with CaptureService(controller) as service:
        yield service


def request(service, method, path, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(
        f"http://{service.host}:{service.port}{path}", data=data, method=method,
        headers={"Content-Type": "application/json"} if data else {})
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


class TestStreamEndpoints:
    def test_default_scenario_lists_nine_enabled(self, tmp_path):
        controller = CaptureController(default_scenario_config(
            mode=PipelineMode.LIVE), store_root=tmp_path)
        with CaptureService(controller) as service:
            status, body = request(service, "GET", "/v1/streams")
        assert status == 200
        assert len(body["streams"]) == 9
        assert all(s["enabled"] for s in body["streams"])

    def test_disable_twice_is_idempotent(self, live_service):
        for _ in range(2):
            status, body = request(live_service, "POST",
                                   "/v1/streams/imu/disable")
            assert status == 200
            assert body == {"name": "imu", "enabled": False}
        _, streams = request(live_service, "GET", "/v1/streams")
        imu = next(s for s in streams["streams"] if s["name"] == "imu")
        assert imu["enabled"] is False

    def test_unknown_stream_404(self, live_service):
        status, body = request(live_service, "POST",
                               "/v1/streams/ghost/enable")
        assert status == 404
        assert "ghost" in body["error"]

    def test_unknown_path_404(self, live_service):
        status, _ = request(live_service, "GET", "/v1/nope")
        assert status == 404


class TestCaptureEndpoints:
    def test_start_stop_cycle(self, live_service, tmp_path):
        status, info = request(live_service, "POST", "/v1/capture/start",
                               {"session_name": "demo"})
        assert status == 200
        time.sleep(0.3)
        status, summary = request(live_service, "POST", "/v1/capture/stop")
        assert status == 200
        counts = {s["name"]: s["message_count"] for s in summary["streams"]}
        assert counts["imu"] > 0
        with StoreReader(info["store_path"]) as r:
            catalog_counts = {s["name"]: s["message_count"]
                              for s in r.catalog["streams"]}
        assert counts == catalog_counts

    def test_start_while_active_is_409(self, live_service):
        status, _ = request(live_service, "POST", "/v1/capture/start",
                            {"session_name": "one"})
        assert status == 200
        status, body = request(live_service, "POST", "/v1/capture/start",
                               {"session_name": "two"})
        assert status == 409
        status, _ = request(live_service, "POST", "/v1/capture/stop")
        assert status == 200

    def test_stop_without_session_is_409(self, live_service):
        status, _ = request(live_service, "POST", "/v1/capture/stop")
        assert status == 409

    def test_malformed_start_is_400(self, live_service):
        status, _ = request(live_service, "POST", "/v1/capture/start", {})
        assert status == 400

    def test_stats_conservation_after_stop(self, live_service):
        request(live_service, "POST", "/v1/capture/start",
                {"session_name": "cons"})
        time.sleep(0.3)
        _, summary = request(live_service, "POST", "/v1/capture/stop")
        _, stats = request(live_service, "GET", "/v1/stats")
        assert stats["session"]["state"] == "stopped"
        stat_counts = {s["name"]: s["message_count"] for s in stats["streams"]}
        assert stat_counts == {s["name"]: s["message_count"]
                               for s in summary["streams"]}


class TestStats:
    def test_idle_stats_shape(self, live_service):
        status, stats = request(live_service, "GET", "/v1/stats")
        assert status == 200
        assert stats["session"]["state"] == "idle"
        row = stats["streams"][0]
        for key in ("name", "enabled", "message_count", "measured_rate_hz",
                    "last_originating_time", "latency_mean_us",
                    "latency_max_us", "drop_count"):
            assert key in row

    def test_measured_rate_converges(self, live_service):
        request(live_service, "POST", "/v1/capture/start",
                {"session_name": "rate"})
        time.sleep(3.2)  # a few 1 Hz samples within the 2 s window
        _, stats = request(live_service, "GET", "/v1/stats")
        request(live_service, "POST", "/v1/capture/stop")
        imu = next(s for s in stats["streams"] if s["name"] == "imu")
        assert imu["measured_rate_hz"] == pytest.approx(200, rel=0.25)

    def test_sse_delivers_snapshots(self, live_service):
        url = f"http://{live_service.host}:{live_service.port}/v1/events"
        events = []
        with urllib.request.urlopen(url, timeout=5) as resp:
            while len(events) < 2:
                line = resp.readline()
                if line.startswith(b"data: "):
                    events.append(json.loads(line[6:]))
        assert all("streams" in e and "session" in e for e in events)


class TestCommandLinearization:
    def test_scripted_storm_applies_in_arrival_order(self, tmp_path):
        controller = CaptureController(light_scenario(PipelineMode.VIRTUAL),
                                       store_root=tmp_path)
        with CaptureService(controller) as service:
            script = [
                ("POST", "/v1/streams/imu/disable", None, 200),
                ("POST", "/v1/streams/imu/enable", None, 200),
                ("POST", "/v1/streams/eye_gaze/disable", None, 200),
                ("POST", "/v1/capture/start", {"session_name": "storm"}, 200),
                ("POST", "/v1/streams/imu/disable", None, 200),
                ("POST", "/v1/capture/stop", None, 200),
                ("POST", "/v1/streams/eye_gaze/enable", None, 200),
            ]
            for method, path, body, expected in script:
                status, _ = request(service, method, path, body)
                assert status == expected
            _, streams = request(service, "GET", "/v1/streams")
        final = {s["name"]: s["enabled"] for s in streams["streams"]}
        assert final == {"imu": False, "eye_gaze": True}
