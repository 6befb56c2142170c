"""Local HTTP service exposing rollouts and accepting configs for the explorer UI.

Read-only except POST /api/configs; filesystem writes go through one lock.
Frame payloads are JSON by default; a client sending
``Accept: application/octet-stream`` gets the binary wire encoding instead.
"""

from __future__ import annotations

import json
import mimetypes
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from . import formats
from .harvest import ConfigValidationError


class RolloutIndex:
    """Scans a data directory for trajectory files and caches their metadata."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self._meta_cache: dict[str, dict] = {}

    def rollouts(self) -> dict[str, Path]:
        found = {}
        for path in sorted(self.data_dir.rglob("*.gstrj")):
            rel = path.relative_to(self.data_dir)
            found[str(rel.with_suffix("")).replace("\\", "/")] = path
        return found

    def listing(self) -> list[dict]:
        items = []
        for rollout_id, path in self.rollouts().items():
            try:
                header = formats.read_trajectory_header(path)
            except formats.FormatError:
                continue
            items.append({
                "id": rollout_id,
                "frames": header["num_frames"],
                "dt": header["dt"],
                "particles": header["num_particles"],
                "provenance": header["provenance"],
            })
        return items

    def meta(self, rollout_id: str) -> dict | None:
        path = self.rollouts().get(rollout_id)
        if path is None:
            return None
        key = f"{rollout_id}:{path.stat().st_mtime_ns}"
        if key not in self._meta_cache:
            header = formats.read_trajectory_header(path)
            roll = formats.read_trajectory(path)
            ranges = {}
            for name in header["fields"]:
                values = np.concatenate([f.scalars[name] for f in roll.frames])
                ranges[name] = [float(values.min()), float(values.max())]
            self._meta_cache[key] = {**header, "field_ranges": ranges, "id": rollout_id}
        return self._meta_cache[key]

    def frame(self, rollout_id: str, index: int):
        path = self.rollouts().get(rollout_id)
        if path is None:
            return None
        try:
            return formats.read_trajectory_frame(path, index)
        except IndexError:
            return None


def frame_to_json(frame) -> dict:
    return {
        "particles": frame.num_particles,
        "dim": frame.dim,
        "positions": frame.positions.tolist(),
        "velocities": frame.velocities.tolist(),
        "scalars": {k: v.tolist() for k, v in frame.scalars.items()},
    }


class _Handler(BaseHTTPRequestHandler):
    server_version = "granule-scope/0.1"
    index: RolloutIndex
    ui_dir: Path | None
    write_lock: threading.Lock

    # route table shared by GET and the logic below
    _FRAME_RE = re.compile(r"^/api/rollouts/(.+)/frames/(\d+)$")
    _META_RE = re.compile(r"^/api/rollouts/(.+)/meta$")

    def log_message(self, format, *args):  # quiet by default
        pass

    def _send_json(self, payload, status=200):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_bytes(self, body: bytes, content_type: str, status=200):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type, Accept")
        self.end_headers()

    def do_GET(self):
        path = self.path.split("?")[0]
        if path == "/api/rollouts":
            self._send_json(self.index.listing())
            return
        match = self._META_RE.match(path)
        if match:
            meta = self.index.meta(match.group(1))
            if meta is None:
                self._send_json({"error": "rollout not found"}, 404)
            else:
                self._send_json(meta)
            return
        match = self._FRAME_RE.match(path)
        if match:
            frame = self.index.frame(match.group(1), int(match.group(2)))
            if frame is None:
                self._send_json({"error": "frame not found"}, 404)
            elif "application/octet-stream" in self.headers.get("Accept", ""):
                self._send_bytes(formats.encode_frame(frame), "application/octet-stream")
            else:
                self._send_json(frame_to_json(frame))
            return
        if path == "/api/configs":
            self._send_json(self._config_listing())
            return
        self._serve_static(path)

    def _config_listing(self) -> list[dict]:
        config_dir = self.index.data_dir / "configs"
        items = []
        if config_dir.is_dir():
            for p in sorted(config_dir.glob("*.json")):
                try:
                    doc = json.loads(p.read_text())
                except json.JSONDecodeError:
                    continue
                items.append({"id": p.stem, "config": doc})
        return items

    def _serve_static(self, path: str):
        if self.ui_dir is None:
            if path == "/":
                self._send_bytes(
                    b"granule-scope service. API under /api/rollouts and /api/configs.\n",
                    "text/plain",
                )
                return
            self._send_json({"error": "not found"}, 404)
            return
        rel = "index.html" if path == "/" else path.lstrip("/")
        target = (self.ui_dir / rel).resolve()
        if not str(target).startswith(str(self.ui_dir.resolve())) or not target.is_file():
            self._send_json({"error": "not found"}, 404)
            return
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        self._send_bytes(target.read_bytes(), ctype)

    def do_POST(self):
        if self.path.split("?")[0] != "/api/configs":
            self._send_json({"error": "not found"}, 404)
            return
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length)
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            self._send_json({"errors": [{"field": "", "message": f"malformed JSON: {exc}"}]}, 422)
            return
        try:
            config = formats.parse_config_dict(doc)
        except ConfigValidationError as exc:
            self._send_json(
                {"errors": [{"field": f, "message": m} for f, m in exc.errors]}, 422
            )
            return
        config_dir = self.index.data_dir / "configs"
        with self.write_lock:
            config_dir.mkdir(parents=True, exist_ok=True)
            digest = formats.content_hash(config.to_dict())[:8]
            name = f"{config.run_label}-{digest}.json"
            formats.write_config(config_dir / name, config)
        self._send_json({"id": (config_dir / name).stem,
                         "path": str(config_dir / name)}, 201)


def make_server(data_dir, port: int = 0, ui_dir=None) -> ThreadingHTTPServer:
    """Build the HTTP server (port 0 picks a free port); caller serves forever."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ValueError(f"data directory {data_dir} does not exist")
    handler = type("BoundHandler", (_Handler,), {
        "index": RolloutIndex(data_dir),
        "ui_dir": Path(ui_dir) if ui_dir else None,
        "write_lock": threading.Lock(),
    })
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve(data_dir, port: int, ui_dir=None) -> None:
    server = make_server(data_dir, port, ui_dir)
    host, bound_port = server.server_address
    print(f"serving {data_dir} on http://{host}:{bound_port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
