"""WebSocket posing service: one pose session per connection.

The bundle is loaded once and shared immutably; every connection gets
its own PoseState, so sessions never see each other's edits. Messages
on a connection are processed strictly in arrival order.

Protocol (subprotocol "fatpad.v1"), JSON text frames:

  client -> server
    {"kind": "load"}
    {"kind": "grab", "handle": "<id>"}
    {"kind": "move", "handle": "<id>", "displacement": [dx, dy, dz]}
    {"kind": "release"}
    {"kind": "undo"}

  server -> client
    {"kind": "load", "fingerprint": ..., "positions": [...flat...],
     "triangles": [...flat...], "handles": [{"id", "pad", "anchor"}],
     "binaryDeltas": bool}
    {"kind": "highlight", "handle", "pad", "vertices": [...],
     "anchor": [x, y, z]}
    {"kind": "meshDelta", "seq": n, "indices": [...],
     "positions": [...flat, 3 per index...]}
    {"kind": "error", "message": "..."}

Move displacements are relative to the handle's cage vertex at the
last commit (grab does not move anything), so a recorded message log
replays to the identical final mesh. Every move, release, and undo is
answered by a meshDelta listing exactly the vertices whose positions
changed since the last frame sent; on meshes with more than 4096
vertices the delta switches to a binary frame:

  b"FPD1" | u32 seq | u32 count | u32 indices[count] | f64 xyz[count*3]

little-endian, which the browser client decodes into typed arrays.
"""

import json
import struct
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles

from .pipeline import load_bundle
from .posing import (PoseError, commit, committed_position, move_handle,
                     rest_state, undo)

SUBPROTOCOL = "fatpad.v1"
BINARY_DELTA_THRESHOLD = 4096
DELTA_MAGIC = b"FPD1"

KINDS = ("load", "grab", "move", "release", "undo")


class _Session:
    """Per-connection pose state plus the last frame the client saw."""

    __slots__ = ("rig", "state", "last_sent", "seq")

    def __init__(self, rig):
        self.rig = rig
        self.state = rest_state(rig)
        self.last_sent = rig.mesh.positions.copy()
        self.seq = 0

    def delta(self):
        """Indices and rows that changed since the last frame, bitwise."""
        current = self.state.current_positions
        changed = np.nonzero((current != self.last_sent).any(axis=1))[0]
        rows = current[changed].copy()
        self.last_sent[changed] = rows
        self.seq += 1
        return self.seq, changed, rows


def _load_payload(rig):
    mesh = rig.mesh
    handles = []
    for handle in sorted(rig.padmap.handles, key=lambda h: h.handle_id):
        anchor = mesh.positions[handle.anchor]
        handles.append({"id": handle.handle_id, "pad": handle.pad_id,
                        "anchor": [float(c) for c in anchor]})
    return {
        "kind": "load",
        "fingerprint": mesh.fingerprint(),
        "positions": [float(c) for c in mesh.positions.ravel()],
        "triangles": [int(i) for i in mesh.triangles.ravel()],
        "handles": handles,
        "binaryDeltas": mesh.vertex_count > BINARY_DELTA_THRESHOLD,
    }


def _highlight_payload(rig, handle_id):
    handle = rig.padmap.handle(handle_id)
    pad = rig.padmap.pad(handle.pad_id)
    anchor = rig.mesh.positions[handle.anchor]
    return {
        "kind": "highlight",
        "handle": handle_id,
        "pad": pad.pad_id,
        "vertices": [int(v) for v in pad.vertices],
        "anchor": [float(c) for c in anchor],
    }


async def _send_delta(ws, session):
    seq, indices, rows = session.delta()
    if session.rig.mesh.vertex_count > BINARY_DELTA_THRESHOLD:
        frame = (DELTA_MAGIC + struct.pack("<II", seq, len(indices))
                 + indices.astype("<u4").tobytes()
                 + rows.astype("<f8").tobytes())
        await ws.send_bytes(frame)
    else:
        await ws.send_json({"kind": "meshDelta", "seq": seq,
                            "indices": [int(i) for i in indices],
                            "positions": [float(c) for c in rows.ravel()]})


def _displacement(msg):
    d = msg.get("displacement")
    if (not isinstance(d, (list, tuple)) or len(d) != 3
            or not all(isinstance(c, (int, float)) for c in d)):
        raise PoseError("move needs a 3-component displacement")
    return np.asarray(d, dtype=np.float64)


async def _handle_message(ws, session, msg):
    kind = msg.get("kind")
    if kind == "load":
        await ws.send_json(_load_payload(session.rig))
    elif kind == "grab":
        await ws.send_json(_highlight_payload(session.rig, msg.get("handle")))
    elif kind == "move":
        handle_id = msg.get("handle")
        base = committed_position(session.state, handle_id)
        move_handle(session.state, handle_id, base + _displacement(msg))
        await _send_delta(ws, session)
    elif kind == "release":
        commit(session.state)
        await _send_delta(ws, session)
    elif kind == "undo":
        undo(session.state)
        await _send_delta(ws, session)
    else:
        raise PoseError(f"unknown message kind {kind!r}; expected one of "
                        + ", ".join(KINDS))


def create_app(bundle_path, static_dir=None):
    """FastAPI app serving pose sessions for one bundle at /session."""
    bundle = load_bundle(bundle_path)
    app = FastAPI(title="fatpads posing service")
    app.state.bundle = bundle

    @app.websocket("/session")
    async def session_endpoint(ws: WebSocket):
        offered = ws.scope.get("subprotocols") or []
        await ws.accept(SUBPROTOCOL if SUBPROTOCOL in offered else None)
        session = _Session(bundle.rig)
        while True:
            try:
                raw = await ws.receive_text()
            except WebSocketDisconnect:
                return
            try:
                msg = json.loads(raw)
                if not isinstance(msg, dict):
                    raise PoseError("message must be a JSON object")
                await _handle_message(ws, session, msg)
            except (json.JSONDecodeError, KeyError) as exc:
                await ws.send_json({"kind": "error",
                                    "message": f"malformed message: {exc}"})
            except (PoseError, ValueError) as exc:
                await ws.send_json({"kind": "error", "message": str(exc)})

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="ui")
    return app


def serve(bundle_path, port, host="127.0.0.1", static_dir=None):
    """Run the service until interrupted (blocking)."""
    import uvicorn

    app = create_app(bundle_path, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
