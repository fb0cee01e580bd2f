"""Screen-space projection of 3D Gaussians and its analytic adjoint.

The pixel kernels (compiled or fallback) only see 2D quantities; everything
connecting them to the 3D parameters lives here as vectorized numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import RenderConfig
from ..scene import sh as sh_mod
from ..scene.camera import Camera
from ..scene.gaussians import GaussianScene, quat_to_rotmat, sigmoid


@dataclass
class ProjectedGaussian:
    """Per-Gaussian screen-space view; mostly a testing/inspection aid."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color_eval: np.ndarray
    opacity_eval: float
    radius: float
    visible: bool


class Projection:
    """SoA result of projecting a scene through a camera."""

    def __init__(self, mean2d, cov2d, conic, depth, color, clamped, opacity,
                 radius, visible, cam_pos, dirs, dir_norm):
        self.mean2d = mean2d      # (N,2) pixels
        self.cov2d = cov2d        # (N,3) packed (a, b, c) for [[a,b],[b,c]]
        self.conic = conic        # (N,3) packed inverse of cov2d
        self.depth = depth        # (N,) camera z
        self.color = color        # (N,3) SH-evaluated RGB
        self.clamped = clamped    # (N,3) bool, color channel clamped at 0
        self.opacity = opacity    # (N,) sigmoid(opacity_logit)
        self.radius = radius      # (N,) coverage half-width, pixels
        self.visible = visible    # (N,) bool
        self.cam_pos = cam_pos    # (N,3) camera-space positions
        self.dirs = dirs          # (N,3) unit view directions (world)
        self.dir_norm = dir_norm  # (N,) ||position - camera center||

    def __len__(self):
        return self.mean2d.shape[0]

    def __getitem__(self, i: int) -> ProjectedGaussian:
        a, b, c = self.cov2d[i]
        return ProjectedGaussian(
            mean2d=self.mean2d[i], cov2d=np.array([[a, b], [b, c]]),
            depth=float(self.depth[i]), color_eval=self.color[i],
            opacity_eval=float(self.opacity[i]), radius=float(self.radius[i]),
            visible=bool(self.visible[i]))


def project(scene: GaussianScene, camera: Camera,
            config: RenderConfig | None = None,
            select: np.ndarray | None = None) -> Projection:
    """Project all Gaussians; `select` masks rows out of visibility only.

    Visibility: in front of the near plane and coverage box intersecting
    the image. The 2D covariance gets the anti-alias diagonal floor.
    """
    cfg = config or RenderConfig()
    n = scene.n
    cam = scene.positions @ camera.R.T + camera.t
    z = cam[:, 2]
    safe_z = np.where(np.abs(z) < 1e-12, 1e-12, z)
    fx, fy = camera.fx, camera.fy
    u = fx * cam[:, 0] / safe_z + camera.cx
    v = fy * cam[:, 1] / safe_z + camera.cy
    mean2d = np.stack([u, v], axis=1)

    cov3d = scene.covariances()
    # M = J @ R, J the 2x3 perspective Jacobian at the camera-space point
    J = np.zeros((n, 2, 3), dtype=np.float64)
    inv_z = 1.0 / safe_z
    J[:, 0, 0] = fx * inv_z
    J[:, 0, 2] = -fx * cam[:, 0] * inv_z * inv_z
    J[:, 1, 1] = fy * inv_z
    J[:, 1, 2] = -fy * cam[:, 1] * inv_z * inv_z
    M = J @ camera.R
    cov2d_full = M @ cov3d @ np.swapaxes(M, 1, 2)
    a = cov2d_full[:, 0, 0] + cfg.aa_floor
    b = cov2d_full[:, 0, 1]
    c = cov2d_full[:, 1, 1] + cfg.aa_floor
    cov2d = np.stack([a, b, c], axis=1)

    det = a * c - b * b
    det = np.where(det <= 1e-300, 1e-300, det)
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    lam_max = mid + disc
    radius = cfg.radius_mult * np.sqrt(np.maximum(lam_max, 0.0))

    # coverage box over pixel centers (ix + 0.5)
    x0 = np.ceil(u - radius - 0.5)
    x1 = np.floor(u + radius - 0.5)
    y0 = np.ceil(v - radius - 0.5)
    y1 = np.floor(v + radius - 0.5)
    on_screen = (x1 >= 0) & (x0 <= camera.width - 1) & \
                (y1 >= 0) & (y0 <= camera.height - 1) & (x0 <= x1) & (y0 <= y1)
    visible = (z > camera.near) & on_screen
    if select is not None:
        visible = visible & select

    centre = camera.center
    vvec = scene.positions - centre
    dir_norm = np.linalg.norm(vvec, axis=1)
    safe_norm = np.where(dir_norm < 1e-12, 1.0, dir_norm)
    dirs = vvec / safe_norm[:, None]
    color, clamped = sh_mod.eval_colors(scene.sh_degree, scene.sh, dirs)
    opacity = sigmoid(scene.opacities)

    return Projection(mean2d, cov2d, conic, z, color, clamped, opacity,
                      radius, visible, cam, dirs, dir_norm)


def blend_order(proj: Projection) -> np.ndarray:
    """Indices of visible Gaussians, depth ascending, ties by index."""
    idx = np.nonzero(proj.visible)[0]
    return idx[np.argsort(proj.depth[idx], kind="stable")]


def coverage_boxes(mean2d, radius, width, height):
    """Inclusive integer pixel bounds of each coverage box, image-clipped.

    A pixel (ix, iy) is covered iff its center (ix+0.5, iy+0.5) lies within
    `radius` of the mean along both axes; the integer bounds encode exactly
    that test.
    """
    x0 = np.clip(np.ceil(mean2d[:, 0] - radius - 0.5), 0, width - 1).astype(np.int32)
    x1 = np.clip(np.floor(mean2d[:, 0] + radius - 0.5), 0, width - 1).astype(np.int32)
    y0 = np.clip(np.ceil(mean2d[:, 1] - radius - 0.5), 0, height - 1).astype(np.int32)
    y1 = np.clip(np.floor(mean2d[:, 1] + radius - 0.5), 0, height - 1).astype(np.int32)
    return x0, x1, y0, y1


def bin_tiles(boxes, width, height, tile_size):
    """CSR tile lists over the blend-ordered arrays.

    Returns (offsets (T+1,), items (K,) int32, tiles_x, tiles_y, tile_size);
    items are positions in the ordered arrays, ascending within each tile
    (preserving blend order).
    """
    x0, x1, y0, y1 = (b.astype(np.int64) for b in boxes)
    m = x0.shape[0]
    tiles_x = (width + tile_size - 1) // tile_size
    tiles_y = (height + tile_size - 1) // tile_size
    n_tiles = tiles_x * tiles_y
    if m == 0:
        return (np.zeros(n_tiles + 1, dtype=np.int64),
                np.zeros(0, dtype=np.int32), tiles_x, tiles_y, tile_size)

    tx0, tx1 = x0 // tile_size, x1 // tile_size
    ty0, ty1 = y0 // tile_size, y1 // tile_size
    spans_x = tx1 - tx0 + 1
    spans_y = ty1 - ty0 + 1
    counts = spans_x * spans_y

    total = int(counts.sum())
    gauss_pos = np.repeat(np.arange(m, dtype=np.int64), counts)
    # per-entry tile coordinates via local offsets within each gaussian's span
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
    sx = np.repeat(spans_x, counts)
    lx = local % sx
    ly = local // sx
    tile = (np.repeat(ty0, counts) + ly) * tiles_x + (np.repeat(tx0, counts) + lx)

    order = np.argsort(tile, kind="stable")  # stable keeps blend order per tile
    tile_sorted = tile[order]
    items = gauss_pos[order].astype(np.int32)
    offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    np.add.at(offsets, tile_sorted + 1, 1)
    np.cumsum(offsets, out=offsets)
    return offsets, items, tiles_x, tiles_y, tile_size


def quat_rotmat_grads(q: np.ndarray):
    """dR/d(unit quaternion) as (N,4,3,3), plus the normalization pullback."""
    q = np.atleast_2d(q)
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn.T
    n = q.shape[0]
    g = np.zeros((n, 4, 3, 3), dtype=np.float64)
    zero = np.zeros(n)
    g[:, 0] = 2.0 * np.stack([
        np.stack([zero, -z, y], axis=1),
        np.stack([z, zero, -x], axis=1),
        np.stack([-y, x, zero], axis=1)], axis=1)
    g[:, 1] = 2.0 * np.stack([
        np.stack([zero, y, z], axis=1),
        np.stack([y, -2 * x, -w], axis=1),
        np.stack([z, w, -2 * x], axis=1)], axis=1)
    g[:, 2] = 2.0 * np.stack([
        np.stack([-2 * y, x, w], axis=1),
        np.stack([x, zero, z], axis=1),
        np.stack([-w, z, -2 * y], axis=1)], axis=1)
    g[:, 3] = 2.0 * np.stack([
        np.stack([-2 * z, -w, x], axis=1),
        np.stack([w, -2 * z, y], axis=1),
        np.stack([x, y, zero], axis=1)], axis=1)
    return g, qn, norm[:, 0]


def backward_to_params(scene: GaussianScene, camera: Camera, proj: Projection,
                       order: np.ndarray, d_mean2d, d_conic, d_color,
                       d_opacity):
    """Chain per-Gaussian screen-space gradients back to raw parameters.

    Inputs are indexed by blend order; outputs are full-scene row arrays
    (zeros for rows that were invisible).
    """
    n = scene.n
    grads = {
        "positions": np.zeros((n, 3)), "log_scales": np.zeros((n, 3)),
        "rotations": np.zeros((n, 4)), "opacities": np.zeros(n),
        "sh": np.zeros_like(scene.sh),
    }
    if order.size == 0:
        return grads
    idx = order
    m = idx.size

    # conic -> cov2d (both packed); full-matrix gradient bookkeeping
    A, B, C = proj.conic[idx].T
    gA, gB, gC = d_conic.T
    lam = np.empty((m, 2, 2))
    lam[:, 0, 0], lam[:, 0, 1] = A, B
    lam[:, 1, 0], lam[:, 1, 1] = B, C
    G_lam = np.empty((m, 2, 2))
    G_lam[:, 0, 0], G_lam[:, 1, 1] = gA, gC
    G_lam[:, 0, 1] = G_lam[:, 1, 0] = 0.5 * gB
    G_cov2d = -lam @ G_lam @ lam  # dL/d(cov2d) as a full 2x2

    # cov2d = M cov3d M^T (+ floor);  M = J R
    cov3d = scene.covariances()[idx]
    cam = proj.cam_pos[idx]
    fx, fy = camera.fx, camera.fy
    inv_z = 1.0 / np.where(np.abs(cam[:, 2]) < 1e-12, 1e-12, cam[:, 2])
    J = np.zeros((m, 2, 3))
    J[:, 0, 0] = fx * inv_z
    J[:, 0, 2] = -fx * cam[:, 0] * inv_z ** 2
    J[:, 1, 1] = fy * inv_z
    J[:, 1, 2] = -fy * cam[:, 1] * inv_z ** 2
    M = J @ camera.R

    G_cov3d = np.swapaxes(M, 1, 2) @ G_cov2d @ M          # dL/dSigma (3x3)
    dM = (G_cov2d + np.swapaxes(G_cov2d, 1, 2)) @ M @ cov3d
    dJ = dM @ camera.R.T

    # J depends on the camera-space point
    dt_cam = np.zeros((m, 3))
    iz2 = inv_z ** 2
    iz3 = inv_z ** 3
    dt_cam[:, 0] = dJ[:, 0, 2] * (-fx * iz2)
    dt_cam[:, 1] = dJ[:, 1, 2] * (-fy * iz2)
    dt_cam[:, 2] = (dJ[:, 0, 0] * (-fx * iz2)
                    + dJ[:, 1, 1] * (-fy * iz2)
                    + dJ[:, 0, 2] * (2 * fx * cam[:, 0] * iz3)
                    + dJ[:, 1, 2] * (2 * fy * cam[:, 1] * iz3))
    # the projected mean moves with the camera-space point by exactly J
    dt_cam += np.einsum("mij,mi->mj", J, d_mean2d)
    d_pos = dt_cam @ camera.R

    # color path: SH direction depends on the position
    basis = sh_mod.sh_basis(scene.sh_degree, proj.dirs[idx])
    dcol = d_color * (~proj.clamped[idx])
    grads_sh = basis[:, :, None] * dcol[:, None, :]
    if scene.sh_degree > 0:
        dbasis = sh_mod.sh_basis_grad(scene.sh_degree, proj.dirs[idx])
        # dL/ddir = sum_bc dcol[c] * coeff[b,c] * dbasis[b]
        d_dir = np.einsum("mbc,mbk,mc->mk", scene.sh[idx], dbasis, dcol)
        nrm = np.where(proj.dir_norm[idx] < 1e-12, 1.0, proj.dir_norm[idx])
        dirs = proj.dirs[idx]
        d_pos += (d_dir - dirs * np.sum(d_dir * dirs, axis=1, keepdims=True)) \
            / nrm[:, None]

    # Sigma = (R S)(R S)^T
    Rq = quat_to_rotmat(scene.rotations[idx])
    S = np.exp(scene.log_scales[idx])
    RS = Rq * S[:, None, :]
    dRS = (G_cov3d + np.swapaxes(G_cov3d, 1, 2)) @ RS
    dS_diag = np.einsum("mij,mij->mj", Rq, dRS)          # dL/d exp(s)
    d_log_scales = dS_diag * S
    dRq = dRS * S[:, None, :]
    gq, _, qnorm = quat_rotmat_grads(scene.rotations[idx])
    d_qn = np.einsum("mqij,mij->mq", gq, dRq)
    # pull back through normalization q_hat = q / |q|
    qn = scene.rotations[idx] / qnorm[:, None]
    d_q = (d_qn - qn * np.sum(d_qn * qn, axis=1, keepdims=True)) / qnorm[:, None]

    op = proj.opacity[idx]
    d_op_logit = d_opacity * op * (1.0 - op)

    grads["positions"][idx] = d_pos
    grads["log_scales"][idx] = d_log_scales
    grads["rotations"][idx] = d_q
    grads["opacities"][idx] = d_op_logit
    grads["sh"][idx] = grads_sh
    return grads
