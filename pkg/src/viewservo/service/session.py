"""Single-loop servo session.

All state mutation happens on one worker thread. Network handlers submit
commands into a queue and block for the response; during a servo the loop
drains that queue between control frames, so an abort lands on a frame
boundary and two commands can never interleave their effects on the world.

Telemetry fans out through per-subscriber bounded buffers: a slow consumer
loses the oldest events and learns about it from a gap notice, the session
never blocks on a client.
"""

from __future__ import annotations

import collections
import logging
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from viewservo.config import ScenarioConfig
from viewservo.exceptions import ServoFailure, ViewServoError
from viewservo.service import protocol
from viewservo.simulator import ServoRun, build_world, manual_jog
from viewservo.view_graph import ViewGraph

logger = logging.getLogger(__name__)

STATES = ("Idle", "ManualControl", "GraphReady", "Servoing", "Fault")

METRICS_TAIL = 20


@dataclass
class SessionConfig:
    """Service-level knobs wrapped around one scenario configuration."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    realtime: bool = True
    telemetry_buffer: int = 512
    heartbeat_s: float = 1.0


class Subscriber:
    """One client's view of the event stream; bounded, drop-oldest."""

    def __init__(self, maxlen: int):
        self._events: collections.deque = collections.deque(maxlen=maxlen)
        self._cond = threading.Condition()
        self._dropped = 0
        self.closed = False

    def push(self, event: dict) -> None:
        with self._cond:
            if self.closed:
                return
            if len(self._events) == self._events.maxlen:
                self._dropped += 1
            self._events.append(event)
            self._cond.notify()

    def pull(self, timeout: float = 0.25) -> list[dict]:
        """Drain available events, waiting up to timeout for the first one.

        If the buffer overflowed since the last pull, the batch starts with a
        gap notice naming the drop count and the step it resumes at.
        """
        with self._cond:
            if not self._events:
                self._cond.wait(timeout)
            batch = list(self._events)
            self._events.clear()
            dropped, self._dropped = self._dropped, 0
        if dropped:
            resume = None
            for event in batch:
                record = event.get("payload", {}).get("record")
                if record is not None:
                    resume = record.get("step")
                    break
            batch.insert(0, _gap_event(dropped, resume))
        return batch

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._events.clear()
            self._cond.notify()


def _gap_event(dropped: int | None, resume_step: int | None) -> dict:
    return {"type": "gap", "payload": {"dropped": dropped, "resume_step": resume_step}}


class TelemetryHub:
    def __init__(self, buffer_len: int):
        self._buffer_len = buffer_len
        self._subscribers: list[Subscriber] = []
        self._lock = threading.Lock()

    def subscribe(self) -> Subscriber:
        sub = Subscriber(self._buffer_len)
        with self._lock:
            self._subscribers.append(sub)
        return sub

    def unsubscribe(self, sub: Subscriber) -> None:
        sub.close()
        with self._lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)

    def publish(self, event_type: str, payload: dict) -> None:
        event = {"type": event_type, "payload": payload}
        with self._lock:
            subscribers = list(self._subscribers)
        for sub in subscribers:
            sub.push(event)


class _CommandBox:
    def __init__(self, name: str, payload: dict):
        self.name = name
        self.payload = payload
        self.response: dict | None = None
        self.done = threading.Event()


class Session:
    """State machine owning one world, one graph, and the control loop."""

    def __init__(self, config: SessionConfig | None = None):
        self.config = config or SessionConfig()
        self.state = "Idle"
        self.error: str | None = None
        self.world = None
        self.graph: ViewGraph | None = None
        self.run: ServoRun | None = None
        self.last_records: list = []
        self.hub = TelemetryHub(self.config.telemetry_buffer)
        self._commands: queue.Queue[_CommandBox] = queue.Queue()
        self._shutdown = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="session-loop", daemon=True)

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._thread.start()

    def shutdown(self, timeout: float = 5.0) -> None:
        self._shutdown.set()
        if self._thread.is_alive():
            self._thread.join(timeout)

    # -- client-facing entry points (any thread) ----------------------------

    def submit(self, name: str, payload: dict | None = None, timeout: float = 30.0) -> dict:
        """Queue one command onto the session loop and wait for its response."""
        box = _CommandBox(name, payload or {})
        self._commands.put(box)
        if not box.done.wait(timeout):
            return {"ok": False, "state": self.state, "error": "command timed out", "result": None}
        return box.response

    def subscribe(self) -> Subscriber:
        sub = self.hub.subscribe()
        # a client joining mid-servo missed the earlier ticks; say so up front
        run = self.run
        if self.state == "Servoing" and run is not None and run.step > 0:
            sub.push(_gap_event(None, run.step))
        return sub

    def unsubscribe(self, sub: Subscriber) -> None:
        self.hub.unsubscribe(sub)

    # -- worker loop ---------------------------------------------------------

    def _loop(self) -> None:
        while not self._shutdown.is_set():
            if self.state == "Servoing" and self.run is not None:
                self._drain_commands()
                if self.state != "Servoing" or self.run is None:
                    continue
                frame_start = time.monotonic()
                self._servo_tick()
                if self.config.realtime:
                    # late frames are skipped, never run concurrently
                    remaining = self.config.scenario.control.dt - (time.monotonic() - frame_start)
                    if remaining > 0:
                        time.sleep(remaining)
            else:
                try:
                    box = self._commands.get(timeout=self.config.heartbeat_s)
                except queue.Empty:
                    self.hub.publish("heartbeat", self._heartbeat())
                    continue
                self._handle(box)

    def _drain_commands(self) -> None:
        while True:
            try:
                box = self._commands.get_nowait()
            except queue.Empty:
                return
            self._handle(box)

    def _heartbeat(self) -> dict:
        return {
            "state": self.state,
            "time_s": self.world.time_s if self.world is not None else None,
            "step": self.run.step if self.run is not None else None,
        }

    def _transition(self, new_state: str, reason: str) -> None:
        old = self.state
        self.state = new_state
        if old != new_state:
            self.hub.publish("state", {"from": old, "to": new_state, "reason": reason})

    def _servo_tick(self) -> None:
        run = self.run
        try:
            record = run.tick()
        except ServoFailure as exc:
            self.world = run.world
            self.last_records = list(run.records)
            self.run = None
            self.error = str(exc)
            self._transition("Fault", self.error)
            self.hub.publish(
                "servo_done",
                {"converged": False, "steps": len(self.last_records), "error": self.error},
            )
            return
        except Exception as exc:  # a tick bug must fault the session, not kill the loop
            logger.exception("servo tick failed")
            self.world = run.world
            self.last_records = list(run.records)
            self.run = None
            self.error = f"internal error: {exc}"
            self._transition("Fault", self.error)
            self.hub.publish(
                "servo_done",
                {"converged": False, "steps": len(self.last_records), "error": self.error},
            )
            return

        self.world = run.world
        self.hub.publish(
            "telemetry",
            {
                "record": protocol.record_payload(record),
                "observation": protocol.observation_payload(run.world.observe()),
                "servo": {
                    "target": run.path[-1],
                    "path": list(run.path),
                    "leg_target": record.target_vertex,
                },
                "eval": protocol.eval_payload(run.world),
            },
        )
        if run.finished:
            result = run.result()
            self.last_records = list(run.records)
            self.run = None
            if result.converged:
                self._transition("GraphReady", "servo converged")
            else:
                self._transition("ManualControl", "servo stopped before convergence")
            self.hub.publish(
                "servo_done",
                {
                    "converged": result.converged,
                    "steps": len(result.records),
                    "final_mpd_px": result.final_mpd_px,
                    "target": result.path[-1],
                },
            )

    # -- command handling (loop thread only) ---------------------------------

    def _handle(self, box: _CommandBox) -> None:
        handler = getattr(self, f"_cmd_{box.name}", None)
        if handler is None:
            box.response = self._reject(f"unknown command {box.name!r}")
        else:
            try:
                box.response = handler(box.payload)
            except ViewServoError as exc:
                box.response = self._reject(str(exc))
            except Exception as exc:  # command bugs respond, never crash the loop
                logger.exception("command %s failed", box.name)
                box.response = self._reject(f"internal error: {exc}")
        box.done.set()

    def _ok(self, result: dict | None = None) -> dict:
        return {"ok": True, "state": self.state, "error": None, "result": result or {}}

    def _reject(self, message: str) -> dict:
        return {"ok": False, "state": self.state, "error": message, "result": None}

    def _infeasible(self, command: str) -> dict:
        return self._reject(f"{command} infeasible in state {self.state}")

    def _cmd_start(self, payload: dict) -> dict:
        if self.state != "Idle":
            return self._infeasible("start")
        scenario = self.config.scenario
        seed = payload.get("seed")
        if seed is not None:
            scenario = scenario.with_overrides(seed=int(seed))
        self.config = SessionConfig(
            scenario=scenario,
            realtime=self.config.realtime,
            telemetry_buffer=self.config.telemetry_buffer,
            heartbeat_s=self.config.heartbeat_s,
        )
        self.world = build_world(scenario)
        self.graph = ViewGraph()
        self.error = None
        self.last_records = []
        self._transition("ManualControl", "session started")
        return self._ok({"observation": protocol.observation_payload(self.world.observe()),
                         "eval": protocol.eval_payload(self.world)})

    def _cmd_get_state(self, payload: dict) -> dict:
        return self._ok(self.snapshot())

    def _cmd_jog(self, payload: dict) -> dict:
        if self.state != "ManualControl":
            return self._infeasible("jog")
        twist = np.asarray(payload["twist"], dtype=float)
        self.world = manual_jog(self.world, twist, self.config.scenario.control)
        return self._ok({"observation": protocol.observation_payload(self.world.observe()),
                         "eval": protocol.eval_payload(self.world)})

    def _cmd_capture(self, payload: dict) -> dict:
        if self.state != "ManualControl":
            return self._infeasible("capture")
        vid = self.graph.capture_view(
            self.world.observe(),
            self.world.camera.output_intrinsics,
            timestamp=self.world.time_s,
            eval_camera_pose=self.world.pose_camera,
        )
        return self._ok({"vertex": protocol.vertex_payload(self.graph.vertices[vid])})

    def _cmd_select_and_execute(self, payload: dict) -> dict:
        if self.state not in ("ManualControl", "GraphReady"):
            return self._infeasible("select_and_execute")
        if self.graph is None or not self.graph.vertices:
            return self._reject("select_and_execute rejected: the view graph is empty")
        target = int(payload["target"])
        if target not in self.graph.vertices:
            return self._reject(f"unknown target vertex {target}")
        scenario = self.config.scenario
        run = ServoRun(
            self.world,
            self.graph,
            target,
            scenario,
            rng=np.random.default_rng(scenario.seed),
        )
        self.run = run
        self._transition("Servoing", f"servo to vertex {target}")
        return self._ok({"target": target, "path": list(run.path)})

    def _cmd_abort(self, payload: dict) -> dict:
        if self.state != "Servoing" or self.run is None:
            return self._infeasible("abort")
        step = self.run.step
        self.last_records = list(self.run.records)
        self.run = None
        self._transition("ManualControl", "servo aborted")
        return self._ok({"aborted_at_step": step})

    def _cmd_reset(self, payload: dict) -> dict:
        self.world = None
        self.graph = None
        self.run = None
        self.error = None
        self.last_records = []
        self._transition("Idle", "session reset")
        return self._ok({})

    # -- snapshots -----------------------------------------------------------

    def snapshot(self) -> dict:
        """Full session picture: state, world, live observation, graph, metrics tail."""
        snap: dict = {
            "state": self.state,
            "error": self.error,
            "config": {
                "kind": self.config.scenario.kind,
                "seed": self.config.scenario.seed,
                "projection_mode": self.config.scenario.control.projection_mode,
                "dt": self.config.scenario.control.dt,
                "final_mpd_px": self.config.scenario.convergence.final_mpd_px,
                "intermediate_mpd_px": self.config.scenario.convergence.intermediate_mpd_px,
                "image_size": list(self.config.scenario.camera.output_size),
                "fov_radius_px": self.config.scenario.camera.fov.radius
                * self.config.scenario.camera.scale,
            },
            "world": None,
            "observation": None,
            "graph": None,
            "servo": None,
            "metrics_tail": [],
        }
        if self.world is not None:
            snap["world"] = {
                "q": self.world.q,
                "time_s": self.world.time_s,
                "rcm_error_mm": self.world.rcm_error_m * 1000.0,
                "trocar": self.world.x_trocar,
                "eval": protocol.eval_payload(self.world),
            }
            snap["observation"] = protocol.observation_payload(self.world.observe())
        if self.graph is not None:
            snap["graph"] = protocol.graph_payload(self.graph)
        run = self.run
        if run is not None:
            last_mpd = None
            for rec in reversed(run.records):
                if np.isfinite(rec.mpd_px):
                    last_mpd = float(rec.mpd_px)
                    break
            snap["servo"] = {
                "target": run.path[-1],
                "path": list(run.path),
                "leg_target": run.leg_target,
                "step": run.step,
                "mpd_px": last_mpd,
            }
        records = run.records if run is not None else self.last_records
        snap["metrics_tail"] = [protocol.record_payload(r) for r in records[-METRICS_TAIL:]]
        return snap
