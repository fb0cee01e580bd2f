"""Session mutation core shared by the HTTP service and event replay.

Every mutating operation is a pure function of (scene state, params dict),
so replaying a session's event log over its initial PLY reproduces the
final scene bit-exactly. The HTTP layer only parses requests, serializes
events, and manages locks.
"""

from __future__ import annotations

import base64
import io
import json

import numpy as np

from ..config import EditConfig, edit_config_from_dict
from ..errors import ValidationError
from ..guidance import NoisyTargetGuidance, RemoteGuidance, TargetImageGuidance
from ..hgs import EditSession
from ..inpaint import (DepthAlignment, adjust_depth_scale, align_depth,
                       incorporate_object, normalize_object,
                       removal_interface_mask, repair_removal)
from ..raster import render
from ..raster.io import decode_mask_png, decode_png16, quantize16
from ..scene import load_scene, save_scene
from ..scene.camera import Camera, orbit_camera
from ..scene.gaussians import GaussianScene
from ..tracing import (SemanticMask, TraceAccumulator, accumulate,
                       assign_labels, backproject_point, remove_label,
                       reproject_points)


def parse_camera(spec, orbit_center, default_wh=(512, 512)) -> Camera:
    """Camera from a request: inline JSON dict or an orbit string
    'orbit:radius,azimuth,elevation[,fov[,w,h]]' around the scene center."""
    if isinstance(spec, dict):
        return Camera.from_json(spec, str(spec.get("id", "")))
    if isinstance(spec, str) and spec.startswith("orbit:"):
        parts = [float(x) for x in spec[len("orbit:"):].split(",")]
        if len(parts) < 3:
            raise ValidationError(f"orbit camera spec needs >=3 numbers: {spec!r}")
        radius, az, el = parts[:3]
        fov = parts[3] if len(parts) > 3 else 60.0
        w = int(parts[4]) if len(parts) > 4 else default_wh[0]
        h = int(parts[5]) if len(parts) > 5 else default_wh[1]
        return orbit_camera(orbit_center, radius, az, el, width=w, height=h,
                            fov_deg=fov, cam_id=spec)
    raise ValidationError(f"unrecognized camera spec: {spec!r}")


def parse_camera_list(entries, orbit_center):
    cams = []
    for e in entries:
        cam = parse_camera(e.get("camera", e), orbit_center)
        if "id" in e:
            cam.cam_id = str(e["id"])
        cams.append(cam)
    if not cams:
        raise ValidationError("empty camera list")
    return cams


def _decode_image_b64(s: str) -> np.ndarray:
    from PIL import Image
    arr = np.asarray(Image.open(io.BytesIO(base64.b64decode(s))),
                     dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[:, :, :3]
    else:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return arr / 255.0


def _decode_depth_b64(s: str, h: int, w: int) -> np.ndarray:
    raw = base64.b64decode(s)
    arr = np.frombuffer(raw, dtype="<f4")
    if arr.size != h * w:
        raise ValidationError(
            f"depth payload has {arr.size} floats, expected {h * w}")
    return arr.reshape(h, w).astype(np.float64)


def build_guidance(spec: dict, scene, cameras, render_config):
    """Guidance backend from a request/config dict.

    Backends: target_image | noisy_target (targets inline as PNG b64 or
    'current_render') and remote (endpoint URL).
    """
    spec = dict(spec or {"backend": "target_image", "targets": "current_render"})
    backend = spec.get("backend", "target_image")
    if backend == "remote":
        if "endpoint" not in spec:
            raise ValidationError("remote guidance needs an 'endpoint'")
        return RemoteGuidance(spec["endpoint"],
                              timeout=float(spec.get("timeout", 30.0)),
                              attempts=int(spec.get("attempts", 3)),
                              backoff=float(spec.get("backoff", 0.25)))
    targets_spec = spec.get("targets", "current_render")
    if targets_spec == "current_render":
        targets = {cam.cam_id: quantize16(render(scene, cam, render_config).color)
                   for cam in cameras}
    else:
        targets = {cid: _decode_image_b64(s) for cid, s in targets_spec.items()}
    if backend == "target_image":
        return TargetImageGuidance(targets)
    if backend == "noisy_target":
        return NoisyTargetGuidance(targets, sigma=float(spec.get("sigma", 0.1)),
                                   seed=int(spec.get("seed", 0)),
                                   blotch_px=int(spec.get("blotch_px", 8)))
    raise ValidationError(f"unknown guidance backend {backend!r}")


class SessionCore:
    """Scene plus the state mutations the endpoints expose."""

    def __init__(self, scene: GaussianScene):
        self.scene = scene
        self.orbit_center = (scene.positions.mean(axis=0)
                             if scene.n else np.zeros(3))
        # last insertion, for the depth-scale slider
        self.insert_rows: tuple[int, int] | None = None
        self.insert_camera: Camera | None = None
        self.insert_base = None  # (positions, log_scales) at placement

    # -- reads -------------------------------------------------------------

    def render_view(self, camera: Camera, config=None, labels_only=None):
        return render(self.scene, camera, config=config,
                      labels_only=labels_only)

    def prompt_points(self, params: dict) -> list[dict]:
        cam = parse_camera(params["camera"], self.orbit_center)
        out = self.render_view(cam)
        points = []
        for px in params.get("points", []):
            points.append(backproject_point(px, cam, out.depth, out.alpha))
        prompts = []
        for spec in params.get("targets", []):
            tcam = parse_camera(spec.get("camera", spec), self.orbit_center)
            if "id" in spec:
                tcam.cam_id = str(spec["id"])
            pix, kept = reproject_points(np.array(points), tcam)
            for p in pix:
                prompts.append({"view_id": tcam.cam_id,
                                "pixel": [float(p[0]), float(p[1])]})
        return prompts

    # -- mutations (each one is an event) -----------------------------------

    def apply_labels(self, params: dict) -> dict:
        acc = TraceAccumulator(self.scene.n)
        names = {}
        for rec in params["masks"]:
            cam = parse_camera(rec["camera"], self.orbit_center)
            if "id" in rec:
                cam.cam_id = str(rec["id"])
            mask = decode_mask_png(base64.b64decode(rec["png_b64"]))
            if mask.shape != (cam.height, cam.width):
                raise ValidationError(
                    f"mask shape {mask.shape} does not match camera "
                    f"'{cam.cam_id}' ({cam.height}, {cam.width})")
            lid = int(rec["label"])
            names.setdefault(lid, str(rec.get("name", f"label_{lid}")))
            accumulate(acc, self.scene, SemanticMask(cam, {lid: mask}))
        assign_labels(acc, self.scene,
                      float(params.get("threshold", 0.7)), names)
        return {lid: int(self.scene.label_column(lid).sum())
                for lid in acc.label_ids}

    def apply_edit(self, params: dict, on_report=None,
                   step_lock=None) -> list[dict]:
        import contextlib
        lock = step_lock if step_lock is not None else contextlib.nullcontext()
        with lock:
            cameras = parse_camera_list(params["cameras"], self.orbit_center)
            cfg = edit_config_from_dict(params.get("config", {}))
            steps = int(params.get("steps", cfg.steps))
            guidance = build_guidance(params.get("guidance"), self.scene,
                                      cameras, cfg.render)
            session = EditSession(self.scene, guidance, cameras, cfg,
                                  prompt=str(params.get("prompt", "")))
        reports = []
        for _ in range(steps):
            with lock:
                rep = session.edit_step()
            doc = rep.to_json()
            reports.append(doc)
            if on_report:
                on_report(doc)
        return reports

    def apply_remove(self, params: dict) -> dict:
        label = int(params["label"])
        members = np.nonzero(self.scene.label_column(label))[0]
        before = self.scene.copy()
        remove_label(self.scene, label)
        result = {"removed": int(members.size), "n": self.scene.n}
        repair = params.get("repair")
        if repair:
            cameras = parse_camera_list(repair["cameras"], self.orbit_center)
            iface, masks = removal_interface_mask(
                before, members, cameras,
                knn_k=int(repair.get("knn_k", 16)),
                dilation_radius=int(repair.get("dilation_radius", 8)))
            # interface indices are in survivor space == current scene rows
            repaired = {cid: _decode_image_b64(s)
                        for cid, s in repair["repaired"].items()}
            cfg = edit_config_from_dict(repair.get("config", {}))
            repair_removal(self.scene, cameras, iface, masks, repaired,
                           cfg, steps=int(repair.get("steps", 200)))
            result["interface"] = int(iface.size)
        self.insert_rows = None  # row indices may have shifted
        return result

    def apply_insert(self, params: dict) -> dict:
        cam = parse_camera(params["camera"], self.orbit_center)
        obj = load_scene_from_b64(params["object_ply_b64"])
        obj = normalize_object(obj)
        mask = decode_mask_png(base64.b64decode(params["mask_png_b64"]))
        if mask.shape != (cam.height, cam.width):
            raise ValidationError("insertion mask does not match camera dims")
        est = _decode_depth_b64(params["depth_f32_b64"], cam.height, cam.width)
        out = self.render_view(cam)
        valid = out.alpha > 0.5
        if params.get("alignment"):
            al = DepthAlignment(float(params["alignment"]["scale"]),
                                float(params["alignment"]["shift"]), 0.0)
        else:
            al = align_depth(out.depth, est, valid)
        combined, label, rows = incorporate_object(
            self.scene, obj, cam, mask, est, al,
            label_name=str(params.get("label_name", "inserted")))
        self.scene = combined
        self.insert_rows = rows
        self.insert_camera = cam
        self.insert_base = (combined.positions[rows[0]:rows[1]].copy(),
                            combined.log_scales[rows[0]:rows[1]].copy())
        return {"label": label, "rows": list(rows),
                "alignment": {"scale": al.scale, "shift": al.shift,
                              "rms": al.residual_rms}}

    def apply_depth_scale(self, params: dict) -> dict:
        if self.insert_rows is None:
            raise ValidationError("no inserted object to scale")
        factor = float(params["factor"])
        lo, hi = self.insert_rows
        adjust_depth_scale(self.scene, slice(lo, hi), self.insert_camera,
                           factor, base=self.insert_base)
        return {"factor": factor, "rows": [lo, hi]}

    def apply_event(self, op: str, params: dict) -> object:
        handler = {
            "labels": self.apply_labels,
            "edit": self.apply_edit,
            "remove": self.apply_remove,
            "insert": self.apply_insert,
            "depth_scale": self.apply_depth_scale,
        }.get(op)
        if handler is None:
            raise ValidationError(f"unknown event op {op!r}")
        return handler(params)


def load_scene_from_b64(data: str) -> GaussianScene:
    import tempfile
    raw = base64.b64decode(data)
    with tempfile.NamedTemporaryFile(suffix=".ply", delete=True) as f:
        f.write(raw)
        f.flush()
        return load_scene(f.name)


def replay_events(initial_ply: str, events_path: str) -> GaussianScene:
    """Rebuild the final scene by re-applying the event log to the
    initial PLY. Deterministic for seeded in-process guidance."""
    core = SessionCore(load_scene(initial_ply))
    with open(events_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            ev = json.loads(line)
            core.apply_event(ev["op"], ev["params"])
    return core.scene
