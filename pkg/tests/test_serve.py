import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from gaitlab.serve import (SCHEMA_VERSION, SimulationService, build_app,
                           make_service)


@pytest.fixture(scope="module")
def service():
    svc = make_service(scheduler=True, realtime=False)
    for _ in range(30):  # populate the snapshot
        svc.tick()
    return svc


def test_frame_schema(service):
    frame = service.snapshot()
    assert frame["schema_version"] == SCHEMA_VERSION
    assert frame["type"] == "state"
    for key in ("t", "v_target", "realized_v", "contacts", "gait_label",
                "power_w", "energy_per_meter", "base_height", "roll", "pitch"):
        assert key in frame, key
    assert len(frame["contacts"]) == 4
    assert set(frame["contacts"]) <= {0, 1}


def test_velocity_command_applies_next_tick(service):
    service.send_command({"type": "set_velocity", "value": 1.2})
    service.tick()
    assert service.snapshot()["v_target"] == 1.2


def test_velocity_command_clamped(service):
    service.send_command({"type": "set_velocity", "value": 99.0})
    service.tick()
    assert service.snapshot()["v_target"] == 1.5
    service.send_command({"type": "set_velocity", "value": 0.9})
    service.tick()


def test_reset_command(service):
    for _ in range(100):
        service.tick()
    service.send_command({"type": "reset"})
    service.tick()
    assert service.snapshot()["t"] <= 0.02


def test_simulation_runs_without_clients():
    svc = make_service(scheduler=True, realtime=False)
    t0 = svc.t
    for _ in range(200):
        svc.tick()
    assert svc.t > t0  # headless liveness: the loop needs no connection


def test_websocket_roundtrip():
    svc = make_service(scheduler=True, realtime=False)
    for _ in range(10):
        svc.tick()
    app = build_app(svc)
    client = TestClient(app)
    with client.websocket_connect("/ws") as ws:
        frame = json.loads(ws.receive_text())
        assert frame["schema_version"] == SCHEMA_VERSION
        ws.send_text(json.dumps({"type": "set_velocity", "value": 1.2}))
        for _ in range(20):
            svc.tick()
        for _ in range(10):
            frame = json.loads(ws.receive_text())
            if frame.get("type") == "state" and frame["v_target"] == 1.2:
                break
        assert frame["v_target"] == 1.2


def test_websocket_malformed_message_keeps_connection():
    svc = make_service(scheduler=True, realtime=False)
    for _ in range(5):
        svc.tick()
    app = build_app(svc)
    client = TestClient(app)
    with client.websocket_connect("/ws") as ws:
        ws.send_text("this is not json")
        err = None
        for _ in range(10):
            msg = json.loads(ws.receive_text())
            if msg.get("type") == "error":
                err = msg
                break
        assert err is not None
        # connection still works: a valid command goes through
        ws.send_text(json.dumps({"type": "set_velocity", "value": 0.5}))
        import time
        for _ in range(100):
            svc.tick()
            if svc.v_target == 0.5:
                break
            time.sleep(0.01)
        assert svc.v_target == 0.5


def test_websocket_out_of_range_velocity_is_error():
    svc = make_service(scheduler=True, realtime=False)
    svc.tick()
    app = build_app(svc)
    client = TestClient(app)
    with client.websocket_connect("/ws") as ws:
        ws.send_text(json.dumps({"type": "set_velocity", "value": 3.0}))
        for _ in range(10):
            msg = json.loads(ws.receive_text())
            if msg.get("type") == "error":
                break
        assert msg["type"] == "error"
        assert "3.0" in msg["message"]
