"""WebSocket telemetry/command service for the scenario loop.

The service runs its own thread with an asyncio event loop; the control loop
talks to it only through the small duck-typed surface documented in
``runtime`` (``decimation``, ``has_clients``, ``publish``, ``drain``,
``notify_error``), so neither side shares mutable state with the other.

Protocol (UTF-8 JSON text frames over WebSocket):

  server -> client
    StateUpdate   {kind, t, q_m, dq_m, q_a, dq_a, q_p, ee_pose, dt_pose,
                   wrench, alpha, active_limits, slack_norms, solver_us,
                   paused, scenario}
    Error         {kind, code, text}
    RoleTaken     {kind, text}

  client -> server
    WrenchCommand   {kind, force[3], torque[3]}
    ScenarioControl {kind, action: pause|resume|reset|select_scenario,
                     scenario?}

Pose fields serialize as {position: [x, y, z], rpy: [yaw, pitch, roll]}.
Any number of read-only observers may connect; the first client to send a
command becomes the pilot and keeps the role until it disconnects.  Command
frames from other clients are answered with RoleTaken and dropped.  Malformed
frames are answered with an Error frame and the connection is kept.

Outbound state flows through a latest-wins slot (a bounded queue of size
one): a slow client never backs the control loop up, it just skips frames.
Inbound commands flow through a bounded queue drained once per loop cycle.
Every accepted WrenchCommand is appended to an in-memory audit log.
"""

from __future__ import annotations

import asyncio
import json
import math
import queue
import threading
import time

import numpy as np

from .chain import Pose
from .runtime import StateSnapshot

_AUDIT_CAP = 100000


def rpy_of(R: np.ndarray) -> tuple[float, float, float]:
    """(yaw, pitch, roll) with R = Rz(yaw) Ry(pitch) Rx(roll)."""
    R = np.asarray(R, dtype=float).reshape(3, 3)
    sp = -R[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = math.asin(sp)
    if abs(sp) > 1.0 - 1e-12:
        # gimbal: yaw and roll collapse into one angle; put it all in yaw
        return math.atan2(-R[0, 1], R[1, 1]), pitch, 0.0
    yaw = math.atan2(R[1, 0], R[0, 0])
    roll = math.atan2(R[2, 1], R[2, 2])
    return yaw, pitch, roll


def _pose_doc(pose: Pose) -> dict:
    return {"position": [float(v) for v in pose.position],
            "rpy": [float(v) for v in rpy_of(pose.rotation)]}


def state_update_doc(snap: StateSnapshot) -> dict:
    """JSON-ready document for one snapshot."""
    return {
        "kind": "StateUpdate",
        "t": float(snap.t),
        "q_m": [float(v) for v in snap.q_m],
        "dq_m": [float(v) for v in snap.dq_m],
        "q_a": [float(v) for v in snap.q_a],
        "dq_a": [float(v) for v in snap.dq_a],
        "q_p": [float(v) for v in snap.q_p],
        "ee_pose": _pose_doc(snap.ee_pose),
        "dt_pose": _pose_doc(snap.dt_pose),
        "wrench": [float(v) for v in snap.wrench],
        "alpha": [float(v) for v in snap.alpha],
        "active_limits": int(snap.active_limits),
        "slack_norms": [float(v) for v in snap.slack_norms],
        "solver_us": float(snap.solver_us),
        "paused": bool(snap.paused),
        "scenario": str(snap.scenario),
    }


def _vec3(doc, key) -> np.ndarray:
    v = doc.get(key)
    if (not isinstance(v, (list, tuple))) or len(v) != 3:
        raise ValueError(f"{key} must be a list of 3 numbers")
    arr = np.array([float(x) for x in v], dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{key} must be finite")
    return arr


class TelemetryService:
    """Running WebSocket service handle; see the module docstring.

    Use as a context manager or call :meth:`start` / :meth:`stop`.  ``port 0``
    binds an ephemeral port, readable from :attr:`port` after ``start``.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 8765,
                 decimation: int = 10):
        if decimation < 1:
            raise ValueError("decimation must be >= 1")
        self.host = host
        self.port = port
        self.decimation = int(decimation)
        self.audit: list[dict] = []
        self._cmd_q: queue.Queue = queue.Queue(maxsize=256)
        self._slot: queue.Queue = queue.Queue(maxsize=1)
        self._nclients = 0
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None
        self._started = threading.Event()
        self._stop_ev: asyncio.Event | None = None
        self._wake: asyncio.Event | None = None
        self._clients: set = set()
        self._pilot = None

    # ------------------------------------------------------------------
    # control-loop side (any thread)
    # ------------------------------------------------------------------
    def has_clients(self) -> bool:
        return self._nclients > 0

    def publish(self, snap: StateSnapshot) -> None:
        """Queue the latest snapshot for broadcast; never blocks."""
        try:
            self._slot.put_nowait(snap)
        except queue.Full:
            try:
                self._slot.get_nowait()
            except queue.Empty:
                pass
            try:
                self._slot.put_nowait(snap)
            except queue.Full:
                pass
        loop = self._loop
        if loop is not None and self._wake is not None:
            loop.call_soon_threadsafe(self._wake.set)

    def drain(self) -> list:
        out = []
        while True:
            try:
                out.append(self._cmd_q.get_nowait())
            except queue.Empty:
                return out

    def notify_error(self, code: str, text: str) -> None:
        """Send an Error frame to the pilot (all clients if none)."""
        loop = self._loop
        if loop is None:
            return
        doc = json.dumps({"kind": "Error", "code": str(code), "text": str(text)})
        loop.call_soon_threadsafe(self._send_error_threadsafe, doc)

    # ------------------------------------------------------------------
    # lifecycle
    # ------------------------------------------------------------------
    def start(self) -> "TelemetryService":
        if self._thread is not None:
            raise RuntimeError("service already started")
        self._thread = threading.Thread(target=self._run, name="telemetry",
                                        daemon=True)
        self._thread.start()
        if not self._started.wait(10.0):
            raise RuntimeError("telemetry service failed to start")
        if self._startup_error is not None:
            self._thread.join()
            self._thread = None
            raise self._startup_error
        return self

    def stop(self) -> None:
        loop = self._loop
        if loop is None:
            return
        try:
            self._cmd_q.put_nowait(("stop",))
        except queue.Full:
            pass
        loop.call_soon_threadsafe(lambda: self._stop_ev.set())
        if self._thread is not None:
            self._thread.join(10.0)
            self._thread = None
        self._loop = None

    def __enter__(self) -> "TelemetryService":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # ------------------------------------------------------------------
    # service thread
    # ------------------------------------------------------------------
    _startup_error: Exception | None = None

    def _run(self) -> None:
        loop = asyncio.new_event_loop()
        asyncio.set_event_loop(loop)
        try:
            loop.run_until_complete(self._main(loop))
        finally:
            loop.close()

    async def _main(self, loop) -> None:
        from websockets.asyncio.server import serve

        self._stop_ev = asyncio.Event()
        self._wake = asyncio.Event()
        try:
            async with serve(self._handler, self.host, self.port) as server:
                self.port = server.sockets[0].getsockname()[1]
                self._loop = loop
                self._startup_error = None
                self._started.set()
                pump = asyncio.ensure_future(self._pump())
                await self._stop_ev.wait()
                pump.cancel()
        except OSError as e:
            self._startup_error = e
            self._started.set()

    async def _pump(self) -> None:
        from websockets.asyncio.server import broadcast

        while True:
            await self._wake.wait()
            self._wake.clear()
            try:
                snap = self._slot.get_nowait()
            except queue.Empty:
                continue
            if self._clients:
                broadcast(self._clients, json.dumps(state_update_doc(snap)))

    def _send_error_threadsafe(self, doc: str) -> None:
        targets = [self._pilot] if self._pilot is not None else list(self._clients)
        for ws in targets:
            asyncio.ensure_future(self._safe_send(ws, doc))

    @staticmethod
    async def _safe_send(ws, doc: str) -> None:
        try:
            await ws.send(doc)
        except Exception:
            pass

    # ------------------------------------------------------------------
    # per-connection handling
    # ------------------------------------------------------------------
    async def _handler(self, ws) -> None:
        self._clients.add(ws)
        self._nclients = len(self._clients)
        try:
            async for raw in ws:
                reply = self._on_frame(ws, raw)
                if reply is not None:
                    await self._safe_send(ws, reply)
        except Exception:
            pass
        finally:
            self._clients.discard(ws)
            self._nclients = len(self._clients)
            if self._pilot is ws:
                self._pilot = None

    def _on_frame(self, ws, raw) -> str | None:
        """Parse one client frame; returns an immediate reply or None."""
        try:
            doc = json.loads(raw)
            if not isinstance(doc, dict):
                raise ValueError("frame must be a JSON object")
            kind = doc.get("kind")
            if kind == "WrenchCommand":
                force = _vec3(doc, "force")
                torque = _vec3(doc, "torque")
            elif kind == "ScenarioControl":
                action = doc.get("action")
                if action not in ("pause", "resume", "reset", "select_scenario"):
                    raise ValueError(f"unknown action {action!r}")
                if action == "select_scenario" and not isinstance(
                        doc.get("scenario"), str):
                    raise ValueError("select_scenario needs a scenario name")
            else:
                raise ValueError(f"unknown frame kind {kind!r}")
        except (ValueError, TypeError, json.JSONDecodeError) as e:
            return json.dumps({"kind": "Error", "code": "malformed",
                               "text": str(e)})

        if self._pilot is None:
            self._pilot = ws
        elif self._pilot is not ws:
            return json.dumps({"kind": "RoleTaken",
                               "text": "another client holds the pilot role"})

        if kind == "WrenchCommand":
            if len(self.audit) < _AUDIT_CAP:
                self.audit.append({"wall_time": time.time(),
                                   "force": [float(v) for v in force],
                                   "torque": [float(v) for v in torque]})
            cmd = ("wrench", force, torque)
        else:
            action = doc["action"]
            if action == "select_scenario":
                cmd = ("select", doc["scenario"])
            else:
                cmd = (action,)
        try:
            self._cmd_q.put_nowait(cmd)
        except queue.Full:
            return json.dumps({"kind": "Error", "code": "busy",
                               "text": "command queue full, frame dropped"})
        return None
