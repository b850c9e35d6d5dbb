"""HTTP/WebSocket front of the session service.

Routes:
  GET  /health   liveness and current state
  GET  /state    full session snapshot (same body as the get_state command)
  POST /command  one command envelope, answered with one response envelope
  WS   /ws       bidirectional: command envelopes in, responses plus the
                 telemetry/heartbeat/state event stream out

When a built operator UI directory is supplied it is mounted at the root, so
the same process serves the console and its data.
"""

from __future__ import annotations

import asyncio
import json
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from starlette.concurrency import run_in_threadpool

from viewservo.exceptions import ProtocolError
from viewservo.service import protocol
from viewservo.service.session import Session, SessionConfig

SUBSCRIBER_POLL_S = 0.2


def create_app(config: SessionConfig | None = None, static_dir: str | Path | None = None) -> FastAPI:
    session = Session(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        session.start()
        try:
            yield
        finally:
            session.shutdown()

    app = FastAPI(title="viewservo session service", lifespan=lifespan)
    app.state.session = session

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "state": session.state}

    @app.get("/state")
    def state() -> JSONResponse:
        response = session.submit("get_state")
        return JSONResponse(protocol.jsonable(response["result"]))

    @app.post("/command")
    async def command(request: Request) -> JSONResponse:
        body = await request.body()
        try:
            envelope, payload = protocol.parse_command(body)
        except ProtocolError as exc:
            rejection = {"ok": False, "state": session.state, "error": str(exc), "result": None}
            return JSONResponse(_response_envelope(0, None, rejection))
        response = await run_in_threadpool(
            session.submit, envelope.type, payload.model_dump()
        )
        return JSONResponse(_response_envelope(0, envelope.seq, response))

    @app.websocket("/ws")
    async def websocket(ws: WebSocket) -> None:
        await ws.accept()
        sub = session.subscribe()
        seq = 0
        send_lock = asyncio.Lock()

        async def send(event_type: str, payload: dict) -> None:
            nonlocal seq
            async with send_lock:
                text = protocol.encode_event(event_type, seq, payload)
                seq += 1
                await ws.send_text(text)

        async def pump_events() -> None:
            while True:
                events = await run_in_threadpool(sub.pull, SUBSCRIBER_POLL_S)
                for event in events:
                    await send(event["type"], event["payload"])

        pump = asyncio.create_task(pump_events())
        try:
            while True:
                text = await ws.receive_text()
                try:
                    envelope, payload = protocol.parse_command(text)
                except ProtocolError as exc:
                    await send(
                        "response",
                        {
                            "in_reply_to": _best_effort_seq(text),
                            "ok": False,
                            "state": session.state,
                            "error": str(exc),
                            "result": None,
                        },
                    )
                    continue
                response = await run_in_threadpool(
                    session.submit, envelope.type, payload.model_dump()
                )
                await send("response", {"in_reply_to": envelope.seq, **response})
        except WebSocketDisconnect:
            pass
        finally:
            pump.cancel()
            session.unsubscribe(sub)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    else:

        @app.get("/")
        def index() -> dict:
            return {
                "service": "viewservo",
                "endpoints": ["/health", "/state", "/command", "/ws"],
            }

    return app


def _response_envelope(seq: int, in_reply_to: int | None, response: dict) -> dict:
    return {
        "type": "response",
        "seq": seq,
        "payload": protocol.jsonable({"in_reply_to": in_reply_to, **response}),
    }


def _best_effort_seq(text: str) -> int | None:
    try:
        value = json.loads(text).get("seq")
        return value if isinstance(value, int) else None
    except Exception:
        return None
