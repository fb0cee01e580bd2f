import numpy as np
import pytest

from splatedit.config import RenderConfig
from splatedit.raster import kernels
from splatedit.scene import GaussianScene, look_at
from splatedit.scene.gaussians import logit
from splatedit.scene.sh import color_to_dc, n_bases


def random_scene(rng, n, sh_degree=0, spread=0.5, scale_mu=0.12,
                 opacity_range=(0.3, 0.95)):
    """A cloud of random splats near the origin."""
    B = n_bases(sh_degree)
    sh = np.zeros((n, B, 3))
    sh[:, 0, :] = color_to_dc(rng.uniform(0.2, 0.9, (n, 3)))
    if B > 1:
        sh[:, 1:, :] = rng.normal(0.0, 0.08, (n, B - 1, 3))
    return GaussianScene(
        positions=rng.normal(0.0, spread, (n, 3)),
        log_scales=rng.normal(np.log(scale_mu), 0.3, (n, 3)),
        rotations=rng.normal(0.0, 1.0, (n, 4)),
        opacities=logit(rng.uniform(*opacity_range, n)),
        sh=sh, sh_degree=sh_degree)


def front_camera(width=16, height=16, dist=4.0, fov=60.0):
    return look_at([0, 0, -dist], [0, 0, 0], width=width, height=height,
                   fov_deg=fov)


def gradcheck_config():
    """Rasterizer config whose semantic discontinuities are pushed below
    finite-difference noise (wide boxes, no skip floor)."""
    return RenderConfig(alpha_clip=0.999, alpha_min=0.0, radius_mult=7.5,
                        transmittance_min=1e-9)


def backends():
    names = ["python"]
    if kernels.compiled_available():
        names.append("compiled")
    return names


@pytest.fixture(params=backends())
def backend(request):
    return request.param


def sphere_plane_scene(rng=None, n_sphere=200, n_plane=500, hole=False):
    """Sphere of splats hovering above a ground plane; labels are known by
    construction (rows [0, n_sphere) are the sphere)."""
    rng = rng or np.random.default_rng(7)
    # sphere surface points, radius 0.5, centered at origin
    v = rng.normal(0, 1, (n_sphere, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    sphere_pos = 0.5 * v
    # plane y = -1, extent [-2, 2]^2
    px = rng.uniform(-2, 2, n_plane)
    pz = rng.uniform(-2, 2, n_plane)
    if hole:
        # leave the region shadowed by the sphere empty
        r = np.sqrt(px ** 2 + pz ** 2)
        keep = r > 0.55
        while keep.sum() < n_plane:
            nx = rng.uniform(-2, 2, n_plane)
            nz = rng.uniform(-2, 2, n_plane)
            ok = np.sqrt(nx ** 2 + nz ** 2) > 0.55
            px = np.concatenate([px[keep], nx[ok]])
            pz = np.concatenate([pz[keep], nz[ok]])
            keep = np.ones(px.size, dtype=bool)
        px, pz = px[:n_plane], pz[:n_plane]
    plane_pos = np.stack([px, -np.ones(n_plane), pz], axis=1)

    n = n_sphere + n_plane
    positions = np.vstack([sphere_pos, plane_pos])
    log_scales = np.full((n, 3), np.log(0.06))
    log_scales[n_sphere:] = np.log(0.12)
    rotations = np.tile([1.0, 0, 0, 0], (n, 1))
    opacities = np.full(n, logit(0.95))
    sh = np.zeros((n, 1, 3))
    sh[:n_sphere, 0] = color_to_dc([0.9, 0.2, 0.2])
    sh[n_sphere:, 0] = color_to_dc([0.2, 0.6, 0.3])
    return GaussianScene(positions, log_scales, rotations, opacities, sh, 0)
