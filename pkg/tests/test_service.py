"""Tests for the session service: state machine, telemetry stream, HTTP/WS front."""

import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from viewservo.config import ControlParams, ConvergenceParams, ScenarioConfig
from viewservo.service import Session, SessionConfig, create_app
from viewservo.simulator import build_graph, build_world, run_servo
from viewservo.vision import CorruptionParams


def fast_session(scenario=None, **kwargs):
    kwargs.setdefault("realtime", False)
    kwargs.setdefault("heartbeat_s", 0.05)
    return Session(SessionConfig(scenario=scenario or ScenarioConfig(), **kwargs))


def wait_for_state(session, states, timeout=30.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if session.state in states:
            return session.state
        time.sleep(0.005)
    raise AssertionError(f"timed out waiting for {states}, still {session.state}")


def drive_capture_script(session):
    assert session.submit("capture")["ok"]
    for leg in session.config.scenario.capture_script:
        for _ in range(leg.steps):
            assert session.submit("jog", {"twist": list(leg.twist)})["ok"]
        assert session.submit("capture")["ok"]


@pytest.fixture
def session():
    s = fast_session()
    s.start()
    yield s
    s.shutdown()


def never_converging_scenario():
    # measurement noise keeps MPD above the absurd threshold for max_steps
    return ScenarioConfig(
        corruption=CorruptionParams(noise_px=0.5),
        convergence=ConvergenceParams(final_mpd_px=1e-9, max_steps=500),
    )


class TestStateMachine:
    def test_initial_state_idle(self, session):
        response = session.submit("get_state")
        assert response["ok"]
        assert response["result"]["state"] == "Idle"
        assert response["result"]["world"] is None

    def test_start_enters_manual_control(self, session):
        response = session.submit("start")
        assert response["ok"]
        assert response["state"] == "ManualControl"
        assert len(response["result"]["observation"]["ids"]) >= 4

    def test_start_twice_rejected(self, session):
        assert session.submit("start")["ok"]
        response = session.submit("start")
        assert not response["ok"]
        assert "infeasible in state ManualControl" in response["error"]

    def test_rejection_is_loss_free(self, session):
        session.submit("start")
        before = json.dumps(session.submit("get_state")["result"], sort_keys=True, default=list)
        rejected = session.submit("abort")
        assert not rejected["ok"]
        after = json.dumps(session.submit("get_state")["result"], sort_keys=True, default=list)
        assert before == after

    def test_jog_in_idle_rejected(self, session):
        response = session.submit("jog", {"twist": [0, 0, 0, 0.1, 0, 0]})
        assert not response["ok"]
        assert "jog infeasible in state Idle" in response["error"]

    def test_capture_grows_graph(self, session):
        session.submit("start")
        assert session.submit("capture")["ok"]
        snap = session.submit("get_state")["result"]
        assert snap["graph"]["current"] == 0
        assert len(snap["graph"]["vertices"]) == 1
        assert snap["state"] == "ManualControl"

    def test_jog_moves_observation(self, session):
        session.submit("start")
        before = session.submit("get_state")["result"]["observation"]
        assert session.submit("jog", {"twist": [0, 0, 0, 0.2, 0, 0]})["ok"]
        after = session.submit("get_state")["result"]["observation"]
        moved = np.asarray(after["pixels"][0]) - np.asarray(before["pixels"][0])
        assert np.linalg.norm(moved) > 0.5

    def test_select_on_empty_graph_rejected(self, session):
        session.submit("start")
        response = session.submit("select_and_execute", {"target": 0})
        assert not response["ok"]
        assert "empty" in response["error"]

    def test_select_unknown_target_rejected(self, session):
        session.submit("start")
        session.submit("capture")
        response = session.submit("select_and_execute", {"target": 99})
        assert not response["ok"]
        assert "unknown target" in response["error"]

    def test_reset_from_anywhere(self, session):
        session.submit("start")
        session.submit("capture")
        assert session.submit("reset")["ok"]
        assert session.submit("get_state")["result"]["state"] == "Idle"

    def test_unknown_command_rejected(self, session):
        response = session.submit("warp")
        assert not response["ok"]
        assert "unknown command" in response["error"]


class TestServoExecution:
    def test_full_run_matches_direct_servo(self):
        scenario = ScenarioConfig(convergence=ConvergenceParams(settle_frames=3))
        session = fast_session(scenario)
        session.start()
        try:
            session.submit("start")
            drive_capture_script(session)
            snap = session.submit("get_state")["result"]
            assert len(snap["graph"]["vertices"]) == 3
            response = session.submit("select_and_execute", {"target": 0})
            assert response["ok"]
            assert response["result"]["path"] == [2, 1, 0]
            assert wait_for_state(session, ("GraphReady", "Fault")) == "GraphReady"
            got = [r.to_csv_row() for r in session.last_records]
        finally:
            session.shutdown()

        world = build_world(scenario)
        world, graph = build_graph(world, scenario)
        oracle = run_servo(world, graph, 0, scenario)
        assert oracle.converged
        assert got == [r.to_csv_row() for r in oracle.records]

    def test_jog_during_servo_rejected_then_abort(self):
        session = fast_session(never_converging_scenario())
        session.start()
        try:
            session.submit("start")
            session.submit("capture")
            for _ in range(5):
                session.submit("jog", {"twist": [0, 0, 0, 0.1, 0, 0]})
            assert session.submit("select_and_execute", {"target": 0})["ok"]
            response = session.submit("jog", {"twist": [0, 0, 0, 0.1, 0, 0]})
            assert not response["ok"]
            assert "infeasible in state Servoing" in response["error"]
            response = session.submit("abort")
            assert response["ok"]
            assert response["state"] == "ManualControl"
            assert response["result"]["aborted_at_step"] >= 1
        finally:
            session.shutdown()

    def test_unconverged_run_returns_to_manual(self):
        scenario = ScenarioConfig(
            corruption=CorruptionParams(noise_px=0.5),
            convergence=ConvergenceParams(final_mpd_px=1e-9, max_steps=6),
        )
        session = fast_session(scenario)
        session.start()
        try:
            session.submit("start")
            session.submit("capture")
            session.submit("select_and_execute", {"target": 0})
            assert wait_for_state(session, ("ManualControl", "Fault")) == "ManualControl"
            assert len(session.last_records) == 6
        finally:
            session.shutdown()

    def test_estimation_blackout_faults_then_reset(self):
        scenario = ScenarioConfig(
            corruption=CorruptionParams(dropout=1.0),
            convergence=ConvergenceParams(failure_abort_steps=5),
        )
        session = fast_session(scenario)
        session.start()
        try:
            session.submit("start")
            session.submit("capture")
            session.submit("select_and_execute", {"target": 0})
            assert wait_for_state(session, ("Fault",)) == "Fault"
            snap = session.submit("get_state")["result"]
            assert "estimation failures" in snap["error"]
            # only reset leaves Fault
            assert not session.submit("jog", {"twist": [0] * 6})["ok"]
            assert not session.submit("select_and_execute", {"target": 0})["ok"]
            assert session.submit("reset")["ok"]
            assert session.state == "Idle"
        finally:
            session.shutdown()


class TestTelemetry:
    def test_servo_stream_is_complete_and_monotone(self):
        scenario = ScenarioConfig(convergence=ConvergenceParams(settle_frames=3))
        session = fast_session(scenario)
        session.start()
        try:
            session.submit("start")
            drive_capture_script(session)
            sub = session.subscribe()
            session.submit("select_and_execute", {"target": 0})
            wait_for_state(session, ("GraphReady",))
            events = sub.pull(timeout=1.0)
            types = [e["type"] for e in events]
            assert "servo_done" in types
            steps = [e["payload"]["record"]["step"] for e in events if e["type"] == "telemetry"]
            assert steps == list(range(len(steps)))
            done = events[types.index("servo_done")]["payload"]
            assert done["converged"] is True
            telemetry = next(e for e in events if e["type"] == "telemetry")
            assert "eval" in telemetry["payload"]
            assert "camera_position_m" in telemetry["payload"]["eval"]
        finally:
            session.shutdown()

    def test_slow_subscriber_gets_gap_notice(self):
        scenario = ScenarioConfig(convergence=ConvergenceParams(settle_frames=3))
        session = fast_session(scenario, telemetry_buffer=4)
        session.start()
        try:
            session.submit("start")
            session.submit("capture")
            for _ in range(8):
                session.submit("jog", {"twist": [0, 0, 0, 0.08, 0, 0]})
            sub = session.subscribe()
            session.submit("select_and_execute", {"target": 0})
            wait_for_state(session, ("GraphReady",))
            events = sub.pull(timeout=1.0)
            assert events[0]["type"] == "gap"
            assert events[0]["payload"]["dropped"] > 0
            assert len(events) <= 5
            steps = [e["payload"]["record"]["step"] for e in events if e["type"] == "telemetry"]
            assert steps == list(range(steps[0], steps[0] + len(steps)))
        finally:
            session.shutdown()

    def test_late_join_mid_servo_sees_gap_with_current_step(self):
        session = fast_session(never_converging_scenario())
        session.start()
        try:
            session.submit("start")
            session.submit("capture")
            for _ in range(5):
                session.submit("jog", {"twist": [0, 0, 0, 0.1, 0, 0]})
            session.submit("select_and_execute", {"target": 0})
            deadline = time.monotonic() + 10.0
            while session.run is None or session.run.step < 3:
                assert time.monotonic() < deadline
                time.sleep(0.005)
            sub = session.subscribe()
            events = sub.pull(timeout=1.0)
            assert events[0]["type"] == "gap"
            assert events[0]["payload"]["resume_step"] >= 3
            session.submit("abort")
        finally:
            session.shutdown()

    def test_idle_session_heartbeats(self):
        session = fast_session()
        session.start()
        try:
            sub = session.subscribe()
            events = sub.pull(timeout=2.0)
            assert events
            assert all(e["type"] == "heartbeat" for e in events)
            assert events[0]["payload"]["state"] == "Idle"
        finally:
            session.shutdown()


def client_app(scenario=None, **kwargs):
    kwargs.setdefault("realtime", False)
    kwargs.setdefault("heartbeat_s", 0.05)
    return create_app(SessionConfig(scenario=scenario or ScenarioConfig(), **kwargs))


class TestHttpApi:
    def test_health_and_root(self):
        with TestClient(client_app()) as client:
            health = client.get("/health").json()
            assert health == {"status": "ok", "state": "Idle"}
            assert "/ws" in client.get("/").json()["endpoints"]

    def test_state_endpoint(self):
        with TestClient(client_app()) as client:
            snap = client.get("/state").json()
            assert snap["state"] == "Idle"
            assert snap["graph"] is None

    def test_command_endpoint_round_trip(self):
        with TestClient(client_app()) as client:
            body = {"type": "start", "seq": 7, "payload": {}}
            reply = client.post("/command", json=body).json()
            assert reply["type"] == "response"
            assert reply["payload"]["in_reply_to"] == 7
            assert reply["payload"]["ok"] is True
            assert reply["payload"]["state"] == "ManualControl"

    def test_command_endpoint_rejects_malformed(self):
        with TestClient(client_app()) as client:
            reply = client.post("/command", json={"type": "jog", "payload": {"twist": [1, 2]}}).json()
            assert reply["payload"]["ok"] is False
            assert "twist" in reply["payload"]["error"]
            reply = client.post("/command", json={"kind": "start"}).json()
            assert reply["payload"]["ok"] is False

    def test_websocket_commands_and_stream(self):
        scenario = ScenarioConfig(convergence=ConvergenceParams(settle_frames=3))
        with TestClient(client_app(scenario)) as client:
            with client.websocket_connect("/ws") as ws:

                def command(ctype, payload, seq):
                    ws.send_text(json.dumps({"type": ctype, "seq": seq, "payload": payload}))

                def next_of(kind):
                    while True:
                        msg = json.loads(ws.receive_text())
                        if msg["type"] == kind:
                            return msg

                command("start", {}, 1)
                reply = next_of("response")
                assert reply["payload"]["in_reply_to"] == 1
                assert reply["payload"]["ok"] is True

                command("capture", {}, 2)
                assert next_of("response")["payload"]["ok"] is True
                for i in range(6):
                    command("jog", {"twist": [0, 0, 0, 0.1, 0, 0]}, 10 + i)
                    assert next_of("response")["payload"]["ok"] is True
                command("select_and_execute", {"target": 0}, 99)
                reply = next_of("response")
                assert reply["payload"]["ok"] is True
                assert reply["payload"]["result"]["path"] == [0]

                seen_steps = []
                seqs = []
                while True:
                    msg = json.loads(ws.receive_text())
                    seqs.append(msg["seq"])
                    if msg["type"] == "telemetry":
                        seen_steps.append(msg["payload"]["record"]["step"])
                    if msg["type"] == "servo_done":
                        assert msg["payload"]["converged"] is True
                        break
                assert seen_steps == list(range(len(seen_steps)))
                command("get_state", {}, 100)
                snap = next_of("response")["payload"]["result"]
                assert snap["state"] == "GraphReady"
            # per-connection seq strictly increasing
            assert all(b > a for a, b in zip(seqs, seqs[1:]))

    def test_websocket_rejects_garbage(self):
        with TestClient(client_app()) as client:
            with client.websocket_connect("/ws") as ws:
                ws.send_text("{not json")
                msg = json.loads(ws.receive_text())
                while msg["type"] != "response":
                    msg = json.loads(ws.receive_text())
                assert msg["payload"]["ok"] is False
                assert "JSON" in msg["payload"]["error"]
