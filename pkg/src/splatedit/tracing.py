"""Semantic tracing: unproject 2D masks onto per-Gaussian labels.

Every Gaussian accumulates, per label, the blend weight it contributed to
masked pixels (o_i * T_i * M) and a normalizer (its total contributed
weight o_i * T_i). The label is assigned when the masked share of its
contribution exceeds the threshold, which keeps the decision meaningful
for splats of any footprint.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import RenderConfig
from .errors import ValidationError
from .raster import render
from .raster.io import load_mask_png
from .scene.camera import Camera
from .scene.gaussians import GaussianScene


@dataclass
class SemanticMask:
    """Per-view binary mask stack indexed by label id."""

    view: Camera
    masks: dict[int, np.ndarray]

    def __post_init__(self):
        for lid, m in self.masks.items():
            m = np.asarray(m, dtype=bool)
            if m.shape != (self.view.height, self.view.width):
                raise ValidationError(
                    f"mask for label {lid} has shape {m.shape}, camera is "
                    f"{(self.view.height, self.view.width)}")
            self.masks[lid] = m


class TraceAccumulator:
    """Per-Gaussian, per-label weight and normalizer sums across views."""

    def __init__(self, n_gaussians: int):
        self.n = n_gaussians
        self.label_ids: list[int] = []
        self.weight = np.zeros((n_gaussians, 0))
        self.counter = np.zeros((n_gaussians, 0))

    def _col(self, label_id: int) -> int:
        if label_id not in self.label_ids:
            self.label_ids.append(label_id)
            self.weight = np.column_stack([self.weight, np.zeros(self.n)])
            self.counter = np.column_stack([self.counter, np.zeros(self.n)])
        return self.label_ids.index(label_id)

    def averages(self) -> np.ndarray:
        return self.weight / np.maximum(self.counter, 1e-12)


def accumulate(acc: TraceAccumulator, scene: GaussianScene,
               mask: SemanticMask, config: RenderConfig | None = None,
               render_output=None) -> TraceAccumulator:
    """Fold one view's masks into the accumulator.

    Renders the view with contribution records (or reuses a provided
    render) and scatters o*T*M into weights, o*T into normalizers.
    """
    if acc.n != scene.n:
        raise ValidationError(
            f"accumulator tracks {acc.n} rows, scene has {scene.n}")
    out = render_output or render(scene, mask.view, config=config,
                                  collect_contributions=True)
    if (out.height, out.width) != (mask.view.height, mask.view.width):
        raise ValidationError("render/mask dimension mismatch")
    offsets, idx, o, T = out.contributions
    if idx.size == 0:
        return acc
    pix = np.repeat(np.arange(out.height * out.width), np.diff(offsets))
    ot = o * T
    for lid, m in mask.masks.items():
        j = acc._col(lid)
        np.add.at(acc.weight[:, j], idx, ot * m.reshape(-1)[pix])
        np.add.at(acc.counter[:, j], idx, ot)
    return acc


def assign_labels(acc: TraceAccumulator, scene: GaussianScene,
                  threshold: float = 0.7,
                  label_names: dict[int, str] | None = None) -> GaussianScene:
    """Set label membership where the masked contribution share exceeds
    the threshold (strict). Gaussians never rendered keep prior labels."""
    if not (0.0 < threshold < 1.0):
        raise ValidationError("threshold must lie in (0, 1)")
    avgs = acc.averages()
    for j, lid in enumerate(acc.label_ids):
        decided = acc.counter[:, j] > 0.0
        members = avgs[:, j] > threshold
        if lid in scene.label_ids:
            prev = scene.label_column(lid).copy()
            members = np.where(decided, members, prev)
        else:
            members = members & decided
        name = (label_names or {}).get(lid, "")
        scene.add_label(lid, members, name)
    return scene


def inherit_labels(scene: GaussianScene, parent: int,
                   children: np.ndarray, round_k: int) -> None:
    """Children copy the parent's label row; their generation is the
    current densification round."""
    scene.label_matrix[children] = scene.label_matrix[parent]
    scene.generations[children] = round_k


def remove_label(scene: GaussianScene, label_id: int) -> GaussianScene:
    """Delete all Gaussians carrying the label; the label column goes too."""
    members = scene.label_column(label_id)  # raises on unknown id
    scene.drop_label_column(label_id)
    scene.keep_rows(~members)
    return scene


def backproject_point(pixel, camera: Camera, depth_map: np.ndarray,
                      alpha_map: np.ndarray) -> np.ndarray:
    """Lift a clicked pixel to a world point using the rendered depth."""
    u, v = float(pixel[0]), float(pixel[1])
    ix = int(np.clip(np.floor(u), 0, camera.width - 1))
    iy = int(np.clip(np.floor(v), 0, camera.height - 1))
    if alpha_map[iy, ix] <= 0.5:
        raise ValidationError(
            f"pixel ({u:.1f}, {v:.1f}) hits empty background (alpha <= 0.5)")
    depth = float(depth_map[iy, ix])
    return camera.backproject((u, v), depth)


def reproject_points(points, camera: Camera):
    """Project world points to this view; points behind the camera or
    outside the image are dropped. Returns (pixels (M,2), kept indices)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    pix, z = camera.project(points)
    keep = (z > camera.near) & (pix[:, 0] >= 0) & (pix[:, 0] < camera.width) \
        & (pix[:, 1] >= 0) & (pix[:, 1] < camera.height)
    return pix[keep], np.nonzero(keep)[0]


def export_prompts(prompts_per_view: dict[str, np.ndarray]) -> str:
    """Serialize reprojected point prompts for an external segmenter."""
    out = []
    for view_id, pixels in prompts_per_view.items():
        for px in np.atleast_2d(pixels):
            out.append({"view_id": view_id, "pixel": [float(px[0]), float(px[1])]})
    return json.dumps(out)


def load_mask_manifest(path: str):
    """Read a tracing manifest: cameras, per-view mask files, label names.

    Schema: {"cameras": {id: cameraJSON}, "masks": [{"camera": id,
    "label": int, "file": relpath}], "label_names": {id: name}}.
    """
    with open(path) as f:
        doc = json.load(f)
    base = os.path.dirname(os.path.abspath(path))
    cameras = {cid: Camera.from_json(cj, cid)
               for cid, cj in doc.get("cameras", {}).items()}
    entries = []
    for rec in doc.get("masks", []):
        cid = rec["camera"]
        if cid not in cameras:
            raise ValidationError(f"mask references unknown camera id '{cid}'")
        mask = load_mask_png(os.path.join(base, rec["file"]))
        cam = cameras[cid]
        if mask.shape != (cam.height, cam.width):
            raise ValidationError(
                f"mask '{rec['file']}' shape {mask.shape} does not match "
                f"camera '{cid}' ({cam.height}, {cam.width})")
        entries.append((cid, int(rec["label"]), mask))
    names = {int(k): v for k, v in doc.get("label_names", {}).items()}
    return cameras, entries, names


def trace_scene(scene: GaussianScene, cameras: dict[str, Camera],
                entries, label_names=None, threshold: float = 0.7,
                config: RenderConfig | None = None) -> GaussianScene:
    """Full tracing pass: accumulate every (view, label) mask, then assign."""
    acc = TraceAccumulator(scene.n)
    by_view: dict[str, dict[int, np.ndarray]] = {}
    for cid, lid, mask in entries:
        by_view.setdefault(cid, {})[lid] = mask
    for cid, masks in by_view.items():
        accumulate(acc, scene, SemanticMask(cameras[cid], masks), config)
    return assign_labels(acc, scene, threshold, label_names)
