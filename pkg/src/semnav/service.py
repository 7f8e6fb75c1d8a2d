"""HTTP service exposing a running pipeline to operator clients.

One worker thread advances the pipeline block by block; commands (goal
selection, playback control) are queued and applied only at block
boundaries. Every processed block publishes an immutable JSON-ready
snapshot to /state and to all /events subscribers.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from functools import partial
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .errors import EngineError
from .navgrid import export_layer
from .pipeline import BlockSnapshot, Pipeline
from .session import PipelineConfig, blockify, open_session


def encode_rle_row(row) -> list[list[int]]:
    """Run-length encode one raster row as [value, count] pairs."""
    runs: list[list[int]] = []
    for value in row:
        value = int(value)
        if runs and runs[-1][0] == value:
            runs[-1][1] += 1
        else:
            runs.append([value, 1])
    return runs


def decode_rle_row(runs) -> list[int]:
    out: list[int] = []
    for value, count in runs:
        out.extend([int(value)] * int(count))
    return out


def encode_raster(arr, origin, cell) -> dict:
    h, w = arr.shape
    return {
        "width": int(w),
        "height": int(h),
        "origin": [float(origin[0]), float(origin[1])],
        "cell": float(cell),
        "rows": [encode_rle_row(arr[r]) for r in range(h)],
    }


def decode_raster(data) -> list[list[int]]:
    return [decode_rle_row(runs) for runs in data["rows"]]


def snapshot_to_dict(snap: BlockSnapshot, status: str = "running") -> dict:
    rasters = {}
    if snap.grid is not None:
        rasters["occupancy"] = encode_raster(snap.grid.occupancy, snap.grid.origin, snap.grid.cell)
        rasters["label"] = encode_raster(snap.grid.label, snap.grid.origin, snap.grid.cell)
    plan = None
    if snap.plan is not None:
        plan = {
            "status": snap.plan.status,
            "goal_cell": list(snap.plan.goal_cell) if snap.plan.goal_cell else None,
            "goal_tracklet": snap.plan.goal_tracklet,
            "waypoints": [list(c) for c in snap.plan.waypoints],
        }
    return {
        "status": status,
        "block": snap.block_index,
        "frame": snap.last_frame_index,
        "trajectory_tail": [
            [idx, [float(x) for x in pose.matrix().reshape(-1)]]
            for idx, pose in snap.trajectory_tail
        ],
        "plane": (
            {"normal": snap.plane_normal, "offset": snap.plane_offset}
            if snap.plane_normal is not None
            else None
        ),
        "rasters": rasters,
        "registry": snap.registry_rows,
        "plan": plan,
        "user_cell": list(snap.user_cell) if snap.user_cell else None,
        "target_class": snap.target_class,
    }


WARMING_SNAPSHOT = {
    "status": "warming",
    "block": -1,
    "frame": -1,
    "trajectory_tail": [],
    "plane": None,
    "rasters": {},
    "registry": [],
    "plan": None,
    "user_cell": None,
    "target_class": None,
}


class SessionService:
    """Drives one session and serves its state over HTTP."""

    def __init__(
        self,
        session_path,
        config: PipelineConfig | None = None,
        seed: int = 0,
        max_frames: int | None = None,
        port: int = 0,
        host: str = "127.0.0.1",
        block_delay: float = 0.0,
    ):
        self.session = open_session(session_path)
        self.config = self.session.config(config)
        self.pipeline = Pipeline(self.config, seed=seed)
        self.max_frames = max_frames
        self.block_delay = block_delay

        self._lock = threading.Lock()
        self._latest: dict = dict(WARMING_SNAPSHOT)
        self._subscribers: list[queue.Queue] = []
        self._commands: queue.Queue = queue.Queue()
        self._resume = threading.Event()
        self._resume.set()
        self._steps = 0
        self._speed = 1.0
        self._stop = threading.Event()
        self._done = threading.Event()

        try:
            handler = partial(_Handler, self)
            self._httpd = ThreadingHTTPServer((host, port), handler)
            self._httpd.daemon_threads = True
        except OSError as exc:
            raise EngineError(f"cannot bind service port {port}: {exc}") from exc
        self.port = self._httpd.server_address[1]
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._server_thread: threading.Thread | None = None
        self._serving = False

    # ----------------------------------------------------------------- state

    def latest(self) -> dict:
        with self._lock:
            return self._latest

    def _publish(self, snap_dict: dict) -> None:
        with self._lock:
            self._latest = snap_dict
            subscribers = list(self._subscribers)
        for q in subscribers:
            q.put(snap_dict)

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    # -------------------------------------------------------------- commands

    def submit(self, command: dict) -> None:
        """Queue a command; it takes effect at the next block boundary.

        Playback commands act immediately on the gate so a paused worker can
        be resumed or stepped.
        """
        kind = command.get("kind")
        if kind == "pause":
            self._resume.clear()
        elif kind == "resume":
            self._steps = 0
            self._resume.set()
        elif kind == "step":
            self._steps += 1
            self._resume.set()
        elif kind == "speed":
            self._speed = max(float(command.get("speed", 1.0)), 0.01)
        else:
            self._commands.put(command)

    def _apply_commands(self) -> None:
        while True:
            try:
                command = self._commands.get_nowait()
            except queue.Empty:
                return
            if command["kind"] == "goal":
                self.pipeline.target_class = command["class"]
                self.pipeline.current_goal = None
            elif command["kind"] == "clear_goal":
                self.pipeline.target_class = None
                self.pipeline.current_goal = None

    # ----------------------------------------------------------------- run

    def _run(self) -> None:
        stream = self.session.frames(self.max_frames)
        for block in blockify(stream, self.config):
            while not self._stop.is_set():
                if self._resume.wait(timeout=0.05):
                    break
            if self._stop.is_set():
                break
            if self._steps > 0:
                self._steps -= 1
                if self._steps == 0:
                    self._resume.clear()
            self._apply_commands()
            snap = self.pipeline.process_block(block)
            self._publish(snapshot_to_dict(snap))
            if self.block_delay > 0:
                time.sleep(self.block_delay / self._speed)
        with self._lock:
            final = dict(self._latest)
        final["status"] = "done"
        self._publish(final)
        self._done.set()

    def start(self) -> None:
        self._server_thread = threading.Thread(
            target=self._httpd.serve_forever, daemon=True
        )
        self._serving = True
        self._server_thread.start()
        self._worker.start()

    def serve_forever(self) -> None:
        self._worker.start()
        print(f"serving on http://{self._httpd.server_address[0]}:{self.port}")
        self._serving = True
        try:
            self._httpd.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            self.shutdown()

    def wait_done(self, timeout: float | None = None) -> bool:
        return self._done.wait(timeout)

    def shutdown(self) -> None:
        self._stop.set()
        self._resume.set()
        if self._serving:
            self._serving = False
            self._httpd.shutdown()
        self._httpd.server_close()


class _Handler(BaseHTTPRequestHandler):
    def __init__(self, service: SessionService, *args, **kwargs):
        self.service = service
        super().__init__(*args, **kwargs)

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, payload, code=200):
        body = json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_text(self, text, code=200):
        body = text.encode()
        self.send_response(code)
        self.send_header("Content-Type", "text/plain")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        if length == 0:
            return {}
        return json.loads(self.rfile.read(length).decode())

    def do_GET(self):
        service = self.service
        if self.path == "/state":
            self._send_json(service.latest())
        elif self.path == "/events":
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            q = service.subscribe()
            try:
                while not service._stop.is_set():
                    try:
                        snap = q.get(timeout=0.25)
                    except queue.Empty:
                        continue
                    self.wfile.write(f"data: {json.dumps(snap)}\n\n".encode())
                    self.wfile.flush()
                    if snap.get("status") == "done":
                        break
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                service.unsubscribe(q)
        elif self.path == "/registry":
            self._send_text(service.pipeline.registry.export_text())
        elif self.path == "/trajectory":
            lines = []
            for idx, pose in service.pipeline.global_map.trajectory:
                vals = " ".join(repr(float(x)) for x in pose.matrix().reshape(-1))
                lines.append(f"{idx} {vals}")
            self._send_text("\n".join(lines) + "\n")
        elif self.path.startswith("/nav/"):
            layer = self.path.removeprefix("/nav/")
            grid = service.pipeline.grid
            if grid is None:
                self._send_json({"error": "no grid yet"}, code=404)
            else:
                try:
                    self._send_text(export_layer(grid, layer))
                except EngineError as exc:
                    self._send_json({"error": str(exc)}, code=404)
        else:
            self._send_json({"error": "not found"}, code=404)

    def do_POST(self):
        service = self.service
        try:
            body = self._read_body()
        except (ValueError, json.JSONDecodeError):
            self._send_json({"error": "bad json"}, code=400)
            return
        if self.path == "/goal":
            if "class" not in body:
                self._send_json({"error": "missing class"}, code=400)
                return
            service.submit({"kind": "goal", "class": int(body["class"])})
            self._send_json({"ok": True})
        elif self.path == "/playback":
            action = body.get("action")
            if action not in ("pause", "resume", "step", "speed"):
                self._send_json({"error": "bad action"}, code=400)
                return
            service.submit({"kind": action, "speed": body.get("speed", 1.0)})
            self._send_json({"ok": True})
        else:
            self._send_json({"error": "not found"}, code=404)

    def do_DELETE(self):
        if self.path == "/goal":
            self.service.submit({"kind": "clear_goal"})
            self._send_json({"ok": True})
        else:
            self._send_json({"error": "not found"}, code=404)
