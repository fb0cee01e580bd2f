"""HTTP service driving interactive editing sessions.

Mutations are serialized per session (a busy session answers 409) and
appended to an event log; GET /frame renders are consistent snapshots.
Validation problems map to 422 and guidance transport failures to 502.
"""

from __future__ import annotations

import base64
import json
import os
import threading
import uuid

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse

from ..errors import (ConsistencyError, FormatError, GuidanceTransportError,
                      SplatEditError, ValidationError)
from ..raster.io import png_bytes
from ..scene import load_scene, save_scene
from .core import SessionCore, parse_camera, replay_events


class SessionRuntime:
    def __init__(self, sid: str, core: SessionCore, workdir: str):
        self.id = sid
        self.core = core
        self.workdir = workdir
        self.mutation_lock = threading.Lock()
        self.scene_lock = threading.RLock()
        self.seq = 0
        self.state = "idle"

    @property
    def events_path(self) -> str:
        return os.path.join(self.workdir, "events.jsonl")

    def log_event(self, op: str, params: dict):
        self.seq += 1
        with open(self.events_path, "a") as f:
            f.write(json.dumps({"seq": self.seq, "op": op,
                                "params": params}) + "\n")


def _error_response(exc: Exception):
    if isinstance(exc, GuidanceTransportError):
        return JSONResponse({"error": str(exc),
                             "attempts": exc.attempts}, status_code=502)
    if isinstance(exc, (ValidationError, FormatError, ConsistencyError, KeyError)):
        return JSONResponse({"error": str(exc)}, status_code=422)
    raise exc


def create_app(sessions_dir: str = "sessions") -> FastAPI:
    app = FastAPI(title="splatedit")
    sessions: dict[str, SessionRuntime] = {}
    os.makedirs(sessions_dir, exist_ok=True)

    def get_session(sid: str) -> SessionRuntime:
        if sid not in sessions:
            raise ValidationError(f"unknown session '{sid}'")
        return sessions[sid]

    @app.exception_handler(SplatEditError)
    async def on_engine_error(request: Request, exc: SplatEditError):
        return _error_response(exc)

    @app.post("/sessions")
    async def create_session(body: dict):
        if "ply_b64" in body:
            raw = base64.b64decode(body["ply_b64"])
            sid = uuid.uuid4().hex[:12]
            workdir = os.path.join(sessions_dir, sid)
            os.makedirs(workdir, exist_ok=True)
            initial = os.path.join(workdir, "initial.ply")
            with open(initial, "wb") as f:
                f.write(raw)
            if "sidecar_json" in body:
                with open(initial + ".json", "w") as f:
                    json.dump(body["sidecar_json"], f)
        elif "ply_path" in body:
            sid = uuid.uuid4().hex[:12]
            workdir = os.path.join(sessions_dir, sid)
            os.makedirs(workdir, exist_ok=True)
            initial = os.path.join(workdir, "initial.ply")
            src = body["ply_path"]
            with open(src, "rb") as fsrc, open(initial, "wb") as fdst:
                fdst.write(fsrc.read())
            if os.path.exists(src + ".json"):
                with open(src + ".json") as fsrc, open(initial + ".json", "w") as fdst:
                    fdst.write(fsrc.read())
        else:
            raise ValidationError("session needs 'ply_b64' or 'ply_path'")
        scene = load_scene(initial)
        rt = SessionRuntime(sid, SessionCore(scene), workdir)
        sessions[sid] = rt
        return {"id": sid, "n_gaussians": scene.n,
                "labels": {str(lid): scene.label_names.get(lid, "")
                           for lid in scene.label_ids}}

    @app.get("/sessions/{sid}/frame")
    async def frame(sid: str, camera: str = Query(...),
                    w: int | None = None, h: int | None = None):
        rt = get_session(sid)
        cam = _resolve_camera(rt, camera, w, h)
        with rt.scene_lock:
            out = rt.core.render_view(cam)
        qs = f"camera={camera}" + (f"&w={w}" if w else "") + (f"&h={h}" if h else "")
        headers = {
            "X-Alpha": f"/sessions/{sid}/frame_alpha?{qs}",
            "X-Depth": f"/sessions/{sid}/frame_depth?{qs}",
        }
        return Response(png_bytes(out.color), media_type="image/png",
                        headers=headers)

    @app.get("/sessions/{sid}/frame_alpha")
    async def frame_alpha(sid: str, camera: str = Query(...),
                          w: int | None = None, h: int | None = None):
        rt = get_session(sid)
        cam = _resolve_camera(rt, camera, w, h)
        with rt.scene_lock:
            out = rt.core.render_view(cam)
        return Response(png_bytes(out.alpha), media_type="image/png")

    @app.get("/sessions/{sid}/frame_depth")
    async def frame_depth(sid: str, camera: str = Query(...),
                          w: int | None = None, h: int | None = None):
        rt = get_session(sid)
        cam = _resolve_camera(rt, camera, w, h)
        with rt.scene_lock:
            out = rt.core.render_view(cam)
        depth = np.asarray(out.depth, dtype="<f4")
        header = f"Pf\n{depth.shape[1]} {depth.shape[0]}\n-1.0\n".encode()
        return Response(header + depth[::-1].tobytes(),
                        media_type="application/octet-stream")

    @app.post("/sessions/{sid}/prompt_points")
    async def prompt_points(sid: str, body: dict):
        rt = get_session(sid)
        with rt.scene_lock:
            prompts = rt.core.prompt_points(body)
        return {"prompts": prompts}

    def _mutate(rt: SessionRuntime, op: str, params: dict):
        if not rt.mutation_lock.acquire(blocking=False):
            return JSONResponse(
                {"error": f"session busy ({rt.state})"}, status_code=409)
        try:
            rt.state = op
            with rt.scene_lock:
                result = rt.core.apply_event(op, params)
            rt.log_event(op, params)
            return {"result": result}
        except SplatEditError as exc:
            return _error_response(exc)
        finally:
            rt.state = "idle"
            rt.mutation_lock.release()

    @app.post("/sessions/{sid}/labels")
    async def labels(sid: str, body: dict):
        return _mutate(get_session(sid), "labels", body)

    @app.post("/sessions/{sid}/edit")
    async def edit(sid: str, body: dict):
        import queue

        rt = get_session(sid)
        if not rt.mutation_lock.acquire(blocking=False):
            return JSONResponse(
                {"error": f"session busy ({rt.state})"}, status_code=409)
        rt.state = "editing"
        q: "queue.Queue" = queue.Queue()
        DONE = object()

        def worker():
            try:
                rt.core.apply_edit(body, on_report=q.put,
                                   step_lock=rt.scene_lock)
                rt.log_event("edit", body)
                q.put(DONE)
            except GuidanceTransportError as exc:
                q.put({"error": str(exc), "attempts": exc.attempts,
                       "status": 502})
                q.put(DONE)
            except SplatEditError as exc:
                q.put({"error": str(exc), "status": 422})
                q.put(DONE)
            finally:
                rt.state = "idle"
                rt.mutation_lock.release()

        threading.Thread(target=worker, daemon=True).start()

        def stream():
            while True:
                doc = q.get()
                if doc is DONE:
                    break
                yield json.dumps(doc) + "\n"

        return StreamingResponse(stream(), media_type="application/jsonl")

    @app.post("/sessions/{sid}/remove")
    async def remove(sid: str, body: dict):
        return _mutate(get_session(sid), "remove", body)

    @app.post("/sessions/{sid}/insert")
    async def insert(sid: str, body: dict):
        return _mutate(get_session(sid), "insert", body)

    @app.post("/sessions/{sid}/depth_scale")
    async def depth_scale(sid: str, body: dict):
        return _mutate(get_session(sid), "depth_scale", body)

    @app.post("/sessions/{sid}/save")
    async def save(sid: str, body: dict | None = None):
        rt = get_session(sid)
        path = (body or {}).get("path") or os.path.join(rt.workdir, "scene.ply")
        with rt.scene_lock:
            save_scene(rt.core.scene, path)
        return {"path": path}

    @app.get("/sessions/{sid}/events")
    async def events(sid: str):
        rt = get_session(sid)
        if not os.path.exists(rt.events_path):
            return Response("", media_type="application/jsonl")
        with open(rt.events_path) as f:
            return Response(f.read(), media_type="application/jsonl")

    return app


def _resolve_camera(rt: SessionRuntime, camera: str, w, h):
    cam_spec = camera
    try:
        cam_spec = json.loads(camera)
    except (json.JSONDecodeError, TypeError):
        pass
    cam = parse_camera(cam_spec, rt.core.orbit_center)
    if w or h:
        cam = cam.resized(int(w or cam.width), int(h or cam.height))
    return cam


def serve(sessions_dir: str, host: str = "127.0.0.1", port: int = 8000):
    import uvicorn
    uvicorn.run(create_app(sessions_dir), host=host, port=port,
                log_level="warning")
