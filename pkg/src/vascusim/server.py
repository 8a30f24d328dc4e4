"""WebSocket teleoperation server.

Serves exactly one operator connection.  Protocol on a single socket:

* client -> server: JSON text messages (Hello, StartScan, SaveMark, ...)
* server -> client: JSON StateUpdate / Rejection replies, plus unsolicited
  10 Hz StateUpdate broadcasts and 20 Hz binary ultrasound frames (PGM).

The physics loop runs at 100 Hz of simulated time, paced to wall clock.
A second connection attempt is refused with a Busy message.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import logging
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .imaging import frame_to_pgm
from .mechanism import DT, DeviceConfig
from .phantom import PhantomModel
from .session import FRAME_EVERY_TICKS, SNAPSHOT_EVERY_TICKS, Session

log = logging.getLogger(__name__)


def create_app(phantom: PhantomModel, config: DeviceConfig, seed: int,
               realtime: bool = True,
               log_path: Optional[str] = None) -> FastAPI:
    app = FastAPI()
    state = {"client": None}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        if state["client"] is not None:
            await ws.send_text(json.dumps(
                {"type": "Busy", "reason": "another operator is connected"}))
            await ws.close()
            return
        state["client"] = ws
        session = Session(phantom, config, seed=seed)
        loop_task = asyncio.create_task(_physics_loop(ws, session, realtime))
        try:
            while True:
                text = await ws.receive_text()
                try:
                    msg = json.loads(text)
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps(
                        {"type": "Rejection", "reason": "invalid JSON"}))
                    continue
                reply = session.handle_message(msg)
                await ws.send_text(json.dumps(reply))
        except WebSocketDisconnect:
            pass
        finally:
            loop_task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await loop_task
            if log_path and session.log is not None:
                session.log.save(log_path)
                log.info("session log written to %s", log_path)
            state["client"] = None

    return app


async def _physics_loop(ws: WebSocket, session: Session,
                        realtime: bool) -> None:
    loop = asyncio.get_running_loop()
    t0 = loop.time()
    while True:
        events = session.tick()
        tick = session.tick_count
        for ev in events:
            await ws.send_text(json.dumps(
                {"type": "Event", "kind": ev.kind.value, "tick": ev.tick,
                 "detail": ev.detail}))
        if tick % SNAPSHOT_EVERY_TICKS == 0:
            await ws.send_text(json.dumps(session.state_update()))
        if tick % FRAME_EVERY_TICKS == 0:
            frame = session.render_frame()
            await ws.send_bytes(frame_to_pgm(frame))
        if realtime:
            target = t0 + tick * DT
            delay = target - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
        else:
            await asyncio.sleep(0)


def serve(phantom: PhantomModel, config: DeviceConfig, seed: int,
          host: str = "127.0.0.1", port: int = 8765,
          log_path: Optional[str] = None) -> None:
    """Run the server until interrupted (blocking)."""
    import uvicorn
    app = create_app(phantom, config, seed, log_path=log_path)
    uvicorn.run(app, host=host, port=port, log_level="info")
