"""Differentiable tile rasterizer: forward render, analytic backward.

render() blends visible Gaussians front to back per pixel (depth ascending,
ties by index). render_backward() returns analytic gradients of a scalar
loss w.r.t. every raw Gaussian parameter given dL/dColor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import RenderConfig
from ..errors import ValidationError
from ..scene.camera import Camera
from ..scene.gaussians import GaussianScene
from . import kernels
from .geometry import (Projection, bin_tiles, blend_order, coverage_boxes,
                       project, backward_to_params)

__all__ = ["render", "render_backward", "project", "RenderOutput",
           "Projection", "kernels"]


@dataclass
class RenderOutput:
    """Forward-render products plus what the backward pass needs."""

    color: np.ndarray            # (H,W,3)
    depth: np.ndarray            # (H,W) alpha-weighted expected depth
    alpha: np.ndarray            # (H,W)
    contributions: tuple | None  # (offsets, gaussian idx, o, T) CSR or None
    width: int
    height: int
    config: RenderConfig
    backend: str
    _proj: Projection = field(repr=False, default=None)
    _order: np.ndarray = field(repr=False, default=None)
    _cache: dict = field(repr=False, default=None)

    def pixel_contributions(self, iy: int, ix: int):
        """Blend-ordered (gaussian index, o, T) triples for one pixel."""
        if self.contributions is None:
            raise ValidationError("render was called without contribution collection")
        offsets, idx, o, T = self.contributions
        p = iy * self.width + ix
        sl = slice(offsets[p], offsets[p + 1])
        return idx[sl], o[sl], T[sl]


def render(scene: GaussianScene, camera: Camera,
           config: RenderConfig | None = None, labels_only: int | None = None,
           collect_contributions: bool = False,
           backend: str | None = None) -> RenderOutput:
    cfg = (config or RenderConfig()).validate()
    kern = kernels.get_backend(backend)
    select = None
    if labels_only is not None:
        select = scene.label_column(labels_only)
    proj = project(scene, camera, cfg, select)
    order = blend_order(proj)

    mean2d = np.ascontiguousarray(proj.mean2d[order])
    conic = np.ascontiguousarray(proj.conic[order])
    color = np.ascontiguousarray(proj.color[order])
    opacity = np.ascontiguousarray(proj.opacity[order])
    depth = np.ascontiguousarray(proj.depth[order])
    radius = proj.radius[order]

    boxes = coverage_boxes(mean2d, radius, camera.width, camera.height)
    tile_csr = bin_tiles(boxes, camera.width, camera.height, cfg.tile_size)

    blend, alpha, depth_sum, t_final, contribs, cache = kern.forward(
        mean2d, conic, color, opacity, depth, boxes, tile_csr,
        camera.width, camera.height, cfg.alpha_clip, cfg.alpha_min,
        cfg.transmittance_min, collect_contributions)

    bg = np.asarray(cfg.background, dtype=np.float64)
    out_color = blend + t_final[:, :, None] * bg
    out_depth = depth_sum / np.maximum(alpha, 1e-10)

    contributions = None
    if collect_contributions:
        offsets, pos, o, T = contribs
        contributions = (offsets, order[pos].astype(np.int64) if pos.size
                         else pos.astype(np.int64), o, T)

    return RenderOutput(
        color=out_color, depth=out_depth, alpha=alpha,
        contributions=contributions, width=camera.width, height=camera.height,
        config=cfg, backend=kern.NAME, _proj=proj, _order=order, _cache=cache)


def render_backward(scene: GaussianScene, camera: Camera, out: RenderOutput,
                    d_color: np.ndarray):
    """Gradients of sum(d_color * color) w.r.t. raw Gaussian parameters.

    Returns a dict with per-row arrays for positions, log_scales, rotations,
    opacities, sh, plus 'mean2d_norm' — the screen-space position gradient
    norms used as the densification statistic.
    """
    d_color = np.asarray(d_color, dtype=np.float64)
    if d_color.shape != (out.height, out.width, 3):
        raise ValidationError(
            f"d_color shape {d_color.shape} != {(out.height, out.width, 3)}")
    if out._cache is None:
        raise ValidationError("RenderOutput is missing the forward cache")
    kern = kernels.get_backend(out.backend)
    d_mean2d, d_conic, d_col, d_op = kern.backward(
        out._cache, np.ascontiguousarray(d_color),
        np.asarray(out.config.background, dtype=np.float64))
    grads = backward_to_params(scene, camera, out._proj, out._order,
                               d_mean2d, d_conic, d_col, d_op)
    stat = np.zeros(scene.n)
    if out._order.size:
        stat[out._order] = np.linalg.norm(d_mean2d, axis=1)
    grads["mean2d_norm"] = stat
    return grads
