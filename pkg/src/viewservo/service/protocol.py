"""Wire protocol for the session service.

Every message in both directions is one JSON object with the envelope shape
{"type": str, "seq": int, "payload": object}. Clients send command envelopes
(types listed in COMMAND_TYPES) and receive exactly one "response" envelope
per command, whose payload carries {ok, state, error, result} plus the
command's seq under "in_reply_to". The telemetry socket additionally streams
unsolicited event envelopes (EVENT_TYPES) with a per-connection monotone seq.

Non-finite floats are encoded as null so every frame parses as strict JSON.
"""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from viewservo.exceptions import ProtocolError

COMMAND_TYPES = (
    "start",
    "get_state",
    "jog",
    "capture",
    "select_and_execute",
    "abort",
    "reset",
)

EVENT_TYPES = (
    "response",
    "state",
    "telemetry",
    "heartbeat",
    "gap",
    "servo_done",
)


class Envelope(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: str
    seq: int = 0
    payload: dict[str, Any] = Field(default_factory=dict)


class EmptyPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")


class StartPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int | None = None


class JogPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    twist: list[float]

    @field_validator("twist")
    @classmethod
    def _six_finite(cls, value: list[float]) -> list[float]:
        if len(value) != 6:
            raise ValueError("twist must have 6 components")
        if not all(math.isfinite(v) for v in value):
            raise ValueError("twist must be finite")
        return value


class SelectPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    target: int


COMMAND_PAYLOADS: dict[str, type[BaseModel]] = {
    "start": StartPayload,
    "get_state": EmptyPayload,
    "jog": JogPayload,
    "capture": EmptyPayload,
    "select_and_execute": SelectPayload,
    "abort": EmptyPayload,
    "reset": EmptyPayload,
}


def parse_command(data: Any) -> tuple[Envelope, BaseModel]:
    """Validate one inbound message; raises ProtocolError with a clear reason."""
    if isinstance(data, (str, bytes)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"not valid JSON: {exc}") from exc
    try:
        envelope = Envelope.model_validate(data)
    except Exception as exc:
        raise ProtocolError(f"malformed envelope: {exc}") from exc
    model = COMMAND_PAYLOADS.get(envelope.type)
    if model is None:
        raise ProtocolError(f"unknown command type {envelope.type!r}")
    try:
        payload = model.model_validate(envelope.payload)
    except Exception as exc:
        raise ProtocolError(f"malformed {envelope.type} payload: {exc}") from exc
    return envelope, payload


def jsonable(value: Any) -> Any:
    """Recursively convert to strict-JSON-safe types; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def encode_event(event_type: str, seq: int, payload: dict) -> str:
    return json.dumps(
        {"type": event_type, "seq": seq, "payload": jsonable(payload)},
        allow_nan=False,
        separators=(",", ":"),
    )


def record_payload(record) -> dict:
    return {
        "step": record.step,
        "time_s": record.time_s,
        "rcm_error_mm": record.rcm_error_mm,
        "e_t": record.e_t,
        "mpd_px": record.mpd_px,
        "inlier_count": record.inlier_count,
        "tip_mm": record.tip_mm,
        "target_vertex": record.target_vertex,
    }


def observation_payload(snapshot) -> dict:
    visible = [f for f in snapshot if f.inside_fov]
    return {
        "ids": [f.id for f in visible],
        "pixels": [f.pixel for f in visible],
    }


def vertex_payload(vertex) -> dict:
    visible = [f for f in vertex.snapshot if f.inside_fov]
    return {
        "id": vertex.id,
        "timestamp": vertex.timestamp,
        "n_features": len(visible),
        "ids": [f.id for f in visible],
        "pixels": [f.pixel for f in visible],
    }


def graph_payload(graph) -> dict:
    return {
        "current": graph.current_id,
        "vertices": [vertex_payload(graph.vertices[vid]) for vid in sorted(graph.vertices)],
        "edges": sorted(sorted(edge) for edge in graph.edges),
    }


def eval_payload(world) -> dict:
    """True world quantities for display and grading only, never for control."""
    return {
        "camera_position_m": world.pose_camera.translation,
        "camera_rotation": world.pose_camera.rotation,
        "tip_mm": world.pose_camera.translation * 1000.0,
        "rcm_error_mm": world.rcm_error_m * 1000.0,
        "time_s": world.time_s,
    }
