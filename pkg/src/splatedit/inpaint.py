"""3D inpainting: object removal with interface repair, and object
incorporation with depth alignment plus live depth-scale adjustment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .config import EditConfig
from .errors import ValidationError
from .guidance import TargetImageGuidance
from .hgs import EditSession
from .raster import render
from .scene.camera import Camera
from .scene.gaussians import GaussianScene, concatenate
from .scene.sh import color_to_dc

INTERFACE_LABEL_NAME = "removal-interface"


@dataclass
class DepthAlignment:
    scale: float
    shift: float
    residual_rms: float

    def apply(self, estimated: np.ndarray) -> np.ndarray:
        return self.scale * estimated + self.shift


def interface_indices(survivor_positions: np.ndarray,
                      removed_positions: np.ndarray, k: int) -> np.ndarray:
    """The union over removed points of their k nearest survivors."""
    if removed_positions.shape[0] == 0:
        raise ValidationError("removal set is empty")
    if k <= 0 or survivor_positions.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    k = min(k, survivor_positions.shape[0])
    tree = cKDTree(survivor_positions)
    _, idx = tree.query(removed_positions, k=k)
    return np.unique(np.atleast_2d(idx).reshape(-1))


def removal_interface_mask(scene_before: GaussianScene,
                           removed: np.ndarray, views: list[Camera],
                           knn_k: int = 16, dilation_radius: int = 8):
    """Interface Gaussians (KNN survivors of the removed set) projected to
    per-view masks, dilated and hole-filled.

    Returns (survivor-space interface indices, {camera_id: mask}).
    """
    removed = np.asarray(removed, dtype=np.int64)
    if removed.size == 0:
        raise ValidationError("removal set is empty")
    keep = np.ones(scene_before.n, dtype=bool)
    keep[removed] = False
    survivor_rows = np.nonzero(keep)[0]
    iface_local = interface_indices(scene_before.positions[survivor_rows],
                                    scene_before.positions[removed], knn_k)
    masks = {}
    pts = scene_before.positions[survivor_rows[iface_local]] \
        if iface_local.size else np.zeros((0, 3))
    if dilation_radius > 0:
        yy, xx = np.ogrid[-dilation_radius:dilation_radius + 1,
                          -dilation_radius:dilation_radius + 1]
        structure = xx * xx + yy * yy <= dilation_radius * dilation_radius
    else:
        structure = None
    for cam in views:
        mask = np.zeros((cam.height, cam.width), dtype=bool)
        if pts.shape[0]:
            pix, z = cam.project(pts)
            ok = (z > cam.near) & (pix[:, 0] >= 0) & (pix[:, 0] < cam.width) \
                & (pix[:, 1] >= 0) & (pix[:, 1] < cam.height)
            ix = pix[ok, 0].astype(int)
            iy = pix[ok, 1].astype(int)
            mask[iy, ix] = True
            if structure is not None and mask.any():
                mask = ndimage.binary_dilation(mask, structure=structure)
            mask = ndimage.binary_fill_holes(mask)
        masks[cam.cam_id] = mask
    return iface_local, masks


def repair_removal(scene: GaussianScene, views: list[Camera],
                   interface_rows: np.ndarray,
                   interface_masks: dict[str, np.ndarray],
                   repaired_images: dict[str, np.ndarray],
                   config: EditConfig | None = None, steps: int = 200):
    """Optimize the interface set against externally repaired images.

    Masked-MSE guidance plus gradient gating keep every non-interface
    Gaussian bit-identical.
    """
    for cam in views:
        if cam.cam_id not in repaired_images:
            raise ValidationError(f"no repaired image for view '{cam.cam_id}'")
        if cam.cam_id not in interface_masks:
            raise ValidationError(f"no interface mask for view '{cam.cam_id}'")
        img = repaired_images[cam.cam_id]
        if img.shape[:2] != (cam.height, cam.width):
            raise ValidationError(
                f"repaired image for '{cam.cam_id}' is {img.shape[:2]}, "
                f"camera is {(cam.height, cam.width)}")
    cfg = config or EditConfig()
    label_id = scene.next_label_id()
    members = np.zeros(scene.n, dtype=bool)
    members[np.asarray(interface_rows, dtype=np.int64)] = True
    scene.add_label(label_id, members, INTERFACE_LABEL_NAME)
    cfg.restrict_label = label_id
    session = EditSession(scene, TargetImageGuidance(repaired_images),
                          views, cfg, prompt="repair", masks=interface_masks)
    reports = [session.edit_step() for _ in range(steps)]
    scene.drop_label_column(label_id)
    return reports


def align_depth(rendered: np.ndarray, estimated: np.ndarray,
                valid: np.ndarray | None = None) -> DepthAlignment:
    """Least-squares (scale, shift) mapping estimated onto rendered depth."""
    rendered = np.asarray(rendered, dtype=np.float64).reshape(-1)
    estimated = np.asarray(estimated, dtype=np.float64).reshape(-1)
    if rendered.shape != estimated.shape:
        raise ValidationError("depth maps differ in size")
    if valid is None:
        v = np.ones(rendered.shape, dtype=bool)
    else:
        v = np.asarray(valid, dtype=bool).reshape(-1)
    est = estimated[v]
    ren = rendered[v]
    if est.size < 2 or np.ptp(est) < 1e-12:
        raise ValidationError(
            "degenerate alignment: need >= 2 valid pixels with distinct "
            "estimated depths")
    A = np.stack([est, np.ones_like(est)], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, ren, rcond=None)
    resid = a * est + b - ren
    return DepthAlignment(float(a), float(b),
                          float(np.sqrt(np.mean(resid * resid))))


def normalize_object(obj: GaussianScene) -> GaussianScene:
    """Center the object and scale it to unit bounding radius."""
    obj = obj.copy()
    centroid = obj.positions.mean(axis=0)
    obj.positions -= centroid
    radius = np.linalg.norm(obj.positions, axis=1).max()
    if radius < 1e-12:
        radius = 1.0
    obj.positions /= radius
    obj.log_scales -= np.log(radius)
    return obj


def incorporate_object(scene: GaussianScene, obj: GaussianScene,
                       camera: Camera, mask2d: np.ndarray,
                       estimated_depth: np.ndarray,
                       alignment: DepthAlignment,
                       label_name: str = "inserted"):
    """Place a unit-normalized object behind a 2D mask and concatenate it.

    Placement: the mask centroid's back-projected ray at the aligned median
    estimated depth; scale matches the projected footprint to the mask's
    pixel extent. Returns (combined scene, new label id, placed row range).
    """
    mask2d = np.asarray(mask2d, dtype=bool)
    if mask2d.shape != (camera.height, camera.width):
        raise ValidationError("mask does not match camera dimensions")
    ys, xs = np.nonzero(mask2d)
    if xs.size == 0:
        raise ValidationError("insertion mask is empty")
    if alignment.scale <= 0:
        raise ValidationError("alignment scale must be positive")
    centroid_px = np.array([xs.mean() + 0.5, ys.mean() + 0.5])
    med_est = float(np.median(np.asarray(estimated_depth)[ys, xs]))
    depth = alignment.scale * med_est + alignment.shift
    if depth <= 0:
        raise ValidationError(f"aligned depth {depth:.4g} is not positive")
    center_world = camera.backproject(centroid_px, depth)

    # unit bounding radius -> world radius matching the mask footprint
    pixel_radius = math.sqrt(xs.size / math.pi)
    focal = 0.5 * (camera.fx + camera.fy)
    world_radius = pixel_radius * depth / focal

    placed = obj.copy()
    placed.positions = placed.positions * world_radius + center_world
    placed.log_scales = placed.log_scales + np.log(world_radius)
    label_id_local = placed.next_label_id()
    placed.add_label(label_id_local, np.ones(placed.n, dtype=bool), label_name)

    combined = concatenate(scene, placed)
    new_label = combined.label_ids[-1]
    return combined, new_label, (scene.n, combined.n)


def depth_scale_rows(positions: np.ndarray, log_scales: np.ndarray,
                     camera: Camera, factor: float):
    """Push points along their camera rays by `factor` in depth; sizes
    follow so the projected footprint is preserved. Pure function."""
    if factor <= 0:
        raise ValidationError("depth-scale factor must be positive")
    centre = camera.center
    new_pos = centre + factor * (positions - centre)
    new_scales = log_scales + np.log(factor)
    return new_pos, new_scales


def adjust_depth_scale(scene: GaussianScene, rows: slice | np.ndarray,
                       camera: Camera, factor: float,
                       base: tuple[np.ndarray, np.ndarray] | None = None) -> None:
    """Rescale an object's camera-space depth in place.

    factor == 1 with no base is exactly a no-op. When `base` holds the
    placement-time (positions, log_scales), the transform is applied to
    those instead of the current rows, making repeated slider calls
    compose exactly (factor f1 then f2 lands bit-identically on f1*f2).
    """
    if factor <= 0:
        raise ValidationError("depth-scale factor must be positive")
    if base is not None:
        pos0, ls0 = base
        if factor == 1.0:
            scene.positions[rows] = pos0
            scene.log_scales[rows] = ls0
            return
        new_pos, new_ls = depth_scale_rows(pos0, ls0, camera, factor)
        scene.positions[rows] = new_pos
        scene.log_scales[rows] = new_ls
        return
    if factor == 1.0:
        return
    new_pos, new_ls = depth_scale_rows(scene.positions[rows],
                                       scene.log_scales[rows], camera, factor)
    scene.positions[rows] = new_pos
    scene.log_scales[rows] = new_ls


def mesh_to_gaussians(vertices: np.ndarray, faces: np.ndarray, n_points: int,
                      rgb=(0.6, 0.6, 0.6), opacity_logit: float = 2.0,
                      seed: int = 0, neighbors: int = 4) -> GaussianScene:
    """Sample a triangle mesh surface into isotropic Gaussians.

    Area-weighted sampling; each splat's radius is the mean distance to its
    nearest sampled neighbors, so coverage roughly tiles the surface.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise ValidationError("faces must be (F,3) vertex indices")
    rng = np.random.default_rng(seed)
    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area = 0.5 * np.linalg.norm(cross, axis=1)
    if area.sum() <= 0:
        raise ValidationError("mesh has zero surface area")
    chosen = rng.choice(faces.shape[0], size=n_points, p=area / area.sum())
    u = rng.random(n_points)
    v = rng.random(n_points)
    flip = u + v > 1
    u[flip] = 1 - u[flip]
    v[flip] = 1 - v[flip]
    t = tri[chosen]
    pts = t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) \
        + v[:, None] * (t[:, 2] - t[:, 0])

    k = min(neighbors + 1, n_points)
    dist, _ = cKDTree(pts).query(pts, k=k)
    spacing = dist[:, 1:].mean(axis=1) if k > 1 else np.full(n_points, 1e-2)
    spacing = np.maximum(spacing, 1e-6)

    sh = np.zeros((n_points, 1, 3))
    sh[:, 0, :] = color_to_dc(np.asarray(rgb, dtype=np.float64))
    return GaussianScene(
        positions=pts,
        log_scales=np.log(spacing)[:, None].repeat(3, axis=1),
        rotations=np.tile([1.0, 0, 0, 0], (n_points, 1)),
        opacities=np.full(n_points, float(opacity_logit)),
        sh=sh, sh_degree=0)
