import numpy as np
import pytest

from splatedit.config import DensifyConfig, EditConfig
from splatedit.errors import ValidationError
from splatedit.inpaint import (DepthAlignment, adjust_depth_scale,
                               align_depth, depth_scale_rows,
                               incorporate_object, interface_indices,
                               mesh_to_gaussians, normalize_object,
                               removal_interface_mask, repair_removal)
from splatedit.raster import render
from splatedit.scene import Camera, GaussianScene, look_at, scenes_equal
from splatedit.scene.gaussians import logit
from splatedit.scene.sh import color_to_dc
from splatedit.tracing import remove_label

from .conftest import front_camera, random_scene, sphere_plane_scene


def brute_force_interface(survivors, removed, k):
    """O(N*M) all-pairs oracle for the interface set."""
    out = set()
    for r in removed:
        d = np.linalg.norm(survivors - r, axis=1)
        out.update(np.argsort(d, kind="stable")[:k].tolist())
    return np.array(sorted(out))


class TestInterface:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        survivors = rng.normal(0, 1, (120, 3))
        removed = rng.normal(0.5, 1, (30, 3))
        for k in (1, 4, 16):
            got = interface_indices(survivors, removed, k)
            ref = brute_force_interface(survivors, removed, k)
            assert np.array_equal(got, ref)

    def test_k_zero_empty(self):
        rng = np.random.default_rng(1)
        got = interface_indices(rng.normal(0, 1, (10, 3)),
                                rng.normal(0, 1, (3, 3)), 0)
        assert got.size == 0

    def test_far_removal_still_k_nearest(self):
        rng = np.random.default_rng(2)
        survivors = rng.normal(0, 1, (50, 3))
        removed = np.array([[500.0, 500.0, 500.0]])
        got = interface_indices(survivors, removed, 5)
        assert got.size == 5
        ref = brute_force_interface(survivors, removed, 5)
        assert np.array_equal(got, ref)

    def test_empty_removal_errors(self):
        with pytest.raises(ValidationError):
            interface_indices(np.zeros((5, 3)), np.zeros((0, 3)), 4)

    def test_sphere_plane_interface_oracle(self):
        sc = sphere_plane_scene()
        removed = np.arange(200)
        iface, masks = removal_interface_mask(
            sc, removed, [front_camera(width=64, height=64, dist=5)],
            knn_k=16, dilation_radius=4)
        survivors = sc.positions[200:]
        ref = brute_force_interface(survivors, sc.positions[:200], 16)
        assert np.array_equal(iface, ref)
        m = masks[""]
        assert m.any()
        # dilation + fill produce a single blob around the removal site
        from scipy import ndimage
        filled = ndimage.binary_fill_holes(m)
        assert np.array_equal(filled, m)

    def test_k_zero_masks_empty(self):
        sc = sphere_plane_scene(np.random.default_rng(3), 20, 40)
        iface, masks = removal_interface_mask(
            sc, np.arange(20), [front_camera()], knn_k=0, dilation_radius=2)
        assert iface.size == 0
        assert not masks[""].any()


class TestAlignDepth:
    def test_identity_exact(self):
        rng = np.random.default_rng(4)
        d = rng.uniform(1, 5, (32, 32))
        al = align_depth(d, d)
        assert abs(al.scale - 1) < 1e-9
        assert abs(al.shift) < 1e-9
        assert al.residual_rms < 1e-9

    def test_exact_affine_recovery(self):
        rng = np.random.default_rng(5)
        rendered = rng.uniform(1, 5, (20, 20))
        est = (rendered - 3.0) / 2.0
        al = align_depth(rendered, est)
        assert abs(al.scale - 2.0) < 1e-9
        assert abs(al.shift - 3.0) < 1e-9
        assert al.residual_rms < 1e-9

    def test_noisy_regression(self):
        rng = np.random.default_rng(6)
        est = rng.uniform(0.5, 4.0, 10_000)
        rendered = 2.0 * est + 1.0 + rng.normal(0, 0.1, est.shape)
        al = align_depth(rendered, est)
        assert abs(al.scale - 2.0) < 0.01
        assert abs(al.shift - 1.0) < 0.02

    def test_degenerate_rank_error(self):
        with pytest.raises(ValidationError):
            align_depth(np.ones(50), np.full(50, 2.0))

    def test_valid_mask_respected(self):
        rng = np.random.default_rng(7)
        est = rng.uniform(1, 3, 500)
        rendered = 3.0 * est - 1.0
        rendered[:100] = 1e6  # poisoned, excluded by the mask
        valid = np.ones(500, dtype=bool)
        valid[:100] = False
        al = align_depth(rendered, est, valid)
        assert abs(al.scale - 3.0) < 1e-9

    def test_affine_reparam_invariance(self):
        rng = np.random.default_rng(8)
        est = rng.uniform(0.5, 4.0, 2000)
        rendered = 1.7 * est + 0.4 + rng.normal(0, 0.05, est.shape)
        base = align_depth(rendered, est)
        re = align_depth(rendered, 2.5 * est + 0.75)
        pred_base = base.apply(est)
        pred_re = re.apply(2.5 * est + 0.75)
        assert np.abs(pred_base - pred_re).max() < 1e-9


def unit_sphere_object(n=150, seed=9):
    rng = np.random.default_rng(seed)
    v = rng.normal(0, 1, (n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    sh = np.zeros((n, 1, 3))
    sh[:, 0] = color_to_dc([0.8, 0.7, 0.2])
    return GaussianScene(
        positions=v, log_scales=np.full((n, 3), np.log(0.15)),
        rotations=np.tile([1.0, 0, 0, 0], (n, 1)),
        opacities=np.full(n, logit(0.9)), sh=sh, sh_degree=0)


class TestIncorporate:
    def _camera(self, size=128):
        K = np.array([[100.0, 0, size / 2], [0, 100.0, size / 2], [0, 0, 1.0]])
        return Camera(K, np.eye(3), np.zeros(3), size, size)

    def test_disk_mask_placement_and_footprint(self):
        cam = self._camera()
        yy, xx = np.mgrid[0:128, 0:128]
        mask = (xx - 64) ** 2 + (yy - 64) ** 2 <= 50 ** 2  # 100 px diameter
        est_depth = np.full((128, 128), 4.0)
        host = sphere_plane_scene(np.random.default_rng(10), 30, 80)
        host.positions += [0, 0, 6.0]
        combined, label, (lo, hi) = incorporate_object(
            host, normalize_object(unit_sphere_object()), cam, mask,
            est_depth, DepthAlignment(1.0, 0.0, 0.0))
        centroid = combined.positions[lo:hi].mean(axis=0)
        assert np.abs(centroid[:2]).max() < 0.05  # on the optical axis
        assert abs(centroid[2] - 4.0) < 0.05
        # projected footprint diameter ~ mask diameter
        pix, z = cam.project(combined.positions[lo:hi])
        diameter = pix[:, 0].max() - pix[:, 0].min()
        assert abs(diameter - 100.0) / 100.0 < 0.05

    def test_empty_mask_errors(self):
        cam = self._camera(32)
        with pytest.raises(ValidationError):
            incorporate_object(sphere_plane_scene(None, 5, 5),
                               unit_sphere_object(20), cam,
                               np.zeros((32, 32), dtype=bool),
                               np.ones((32, 32)), DepthAlignment(1, 0, 0))

    def test_host_unchanged_outside_footprint(self):
        cam = self._camera(96)
        yy, xx = np.mgrid[0:96, 0:96]
        mask = (xx - 48) ** 2 + (yy - 48) ** 2 <= 12 ** 2
        est_depth = np.full((96, 96), 3.0)
        host = sphere_plane_scene(np.random.default_rng(11), 40, 120)
        host.positions += [0, 0, 8.0]
        before = render(host, cam)
        combined, label, _ = incorporate_object(
            host, unit_sphere_object(80), cam, mask, est_depth,
            DepthAlignment(1.0, 0.0, 0.0))
        after = render(combined, cam)
        # outside a generous margin around the mask, images agree
        from scipy import ndimage
        margin = ndimage.binary_dilation(mask, iterations=30)
        outside = ~margin
        assert np.abs(after.color[outside] - before.color[outside]).max() < 1e-9

    def test_remove_label_restores_host_bit_exactly(self):
        cam = self._camera(64)
        yy, xx = np.mgrid[0:64, 0:64]
        mask = (xx - 32) ** 2 + (yy - 30) ** 2 <= 9 ** 2
        host = sphere_plane_scene(np.random.default_rng(12), 25, 60)
        host.positions += [0, 0, 5.0]
        host.add_label(0, np.arange(host.n) < 25, "sphere")
        snapshot = host.copy()
        combined, label, _ = incorporate_object(
            host, unit_sphere_object(60), cam, mask,
            np.full((64, 64), 2.5), DepthAlignment(1.0, 0.0, 0.0))
        restored = remove_label(combined, label)
        assert scenes_equal(restored, snapshot)


class TestDepthScale:
    def test_factor_one_bit_identical(self):
        sc = sphere_plane_scene(np.random.default_rng(13), 10, 20)
        before = sc.copy()
        adjust_depth_scale(sc, slice(0, 10), front_camera(), 1.0)
        assert scenes_equal(sc, before)

    def test_factor_two_preserves_projection(self):
        cam = look_at([0, 0, -6], [0, 0, 0], width=64, height=64)
        obj = unit_sphere_object(100)
        obj.positions *= 0.4
        sc = obj.copy()
        pix0, _ = cam.project(np.array([sc.positions.mean(axis=0)]))
        sil0 = render(sc, cam).alpha > 0.3
        adjust_depth_scale(sc, slice(0, sc.n), cam, 2.0)
        pix1, _ = cam.project(np.array([sc.positions.mean(axis=0)]))
        sil1 = render(sc, cam).alpha > 0.3
        assert np.abs(pix1 - pix0).max() < 1e-6
        assert abs(int(sil1.sum()) - int(sil0.sum())) <= 0.01 * sil0.sum() + 3

    def test_base_path_composition_bit_exact(self):
        cam = front_camera()
        sc = sphere_plane_scene(np.random.default_rng(14), 15, 15)
        rows = slice(0, 15)
        base = (sc.positions[rows].copy(), sc.log_scales[rows].copy())
        a = sc.copy()
        adjust_depth_scale(a, rows, cam, 2.0, base=base)
        adjust_depth_scale(a, rows, cam, 2.0 * 0.7, base=base)
        b = sc.copy()
        adjust_depth_scale(b, rows, cam, 1.4, base=base)
        assert scenes_equal(a, b)

    def test_relative_group_property_origin_camera(self):
        # camera at the origin, power-of-two factors: exact composition
        cam = Camera(np.array([[50.0, 0, 16], [0, 50.0, 16], [0, 0, 1]]),
                     np.eye(3), np.zeros(3), 32, 32)
        assert np.allclose(cam.center, 0.0)
        rng = np.random.default_rng(15)
        pos = rng.normal(0, 1, (20, 3)) + [0, 0, 5]
        ls = rng.normal(0, 0.3, (20, 3))
        p1, s1 = depth_scale_rows(pos, ls, cam, 2.0)
        p2, s2 = depth_scale_rows(p1, s1, cam, 0.5)
        assert np.array_equal(p2, pos)
        assert np.abs(s2 - ls).max() < 1e-15

    def test_invalid_factor(self):
        sc = sphere_plane_scene(np.random.default_rng(16), 5, 5)
        with pytest.raises(ValidationError):
            adjust_depth_scale(sc, slice(0, 5), front_camera(), 0.0)


class TestRepair:
    def test_repaired_equals_render_no_motion(self):
        from splatedit.raster.io import quantize16
        sc = sphere_plane_scene(np.random.default_rng(17), 30, 80)
        cams = [look_at([0, 2.5, -4], [0, -0.5, 0], width=32, height=32,
                        cam_id="v0")]
        repaired = {"v0": quantize16(render(sc, cams[0]).color)}
        masks = {"v0": np.ones((32, 32), dtype=bool)}
        iface = np.arange(10)
        before = sc.copy()
        cfg = EditConfig(densify=DensifyConfig(interval=0))
        repair_removal(sc, cams, iface, masks, repaired, cfg, steps=5)
        for k in ("positions", "log_scales", "rotations", "opacities", "sh"):
            assert np.array_equal(getattr(sc, k), getattr(before, k)), k

    def test_non_interface_rows_never_move(self):
        rng = np.random.default_rng(18)
        sc = sphere_plane_scene(rng, 30, 80)
        cams = [look_at([0, 2.5, -4], [0, -0.5, 0], width=32, height=32,
                        cam_id="v0")]
        repaired = {"v0": rng.uniform(0, 1, (32, 32, 3))}
        masks = {"v0": np.ones((32, 32), dtype=bool)}
        iface = np.arange(12)
        outside = np.ones(sc.n, dtype=bool)
        outside[:12] = False
        frozen = {k: getattr(sc, k)[outside].copy()
                  for k in ("positions", "log_scales", "rotations",
                            "opacities", "sh")}
        cfg = EditConfig(densify=DensifyConfig(interval=0))
        repair_removal(sc, cams, iface, masks, repaired, cfg, steps=25)
        for k, v in frozen.items():
            assert np.array_equal(getattr(sc, k)[outside], v), k
        # interface rows did move
        assert not np.array_equal(sc.positions[:12],
                                  sphere_plane_scene(
                                      np.random.default_rng(18), 30, 80)
                                  .positions[:12])

    def test_gating_holds_through_densification(self):
        rng = np.random.default_rng(20)
        sc = sphere_plane_scene(rng, 30, 80)
        cams = [look_at([0, 2.5, -4], [0, -0.5, 0], width=32, height=32,
                        cam_id="v0")]
        repaired = {"v0": rng.uniform(0, 1, (32, 32, 3))}
        masks = {"v0": np.ones((32, 32), dtype=bool)}
        iface = np.arange(12)
        frozen = sc.positions[12:].copy()
        cfg = EditConfig(densify=DensifyConfig(interval=10))
        repair_removal(sc, cams, iface, masks, repaired, cfg, steps=25)
        # every untouched row survives bit-exactly somewhere in the scene
        final = {row.tobytes() for row in sc.positions}
        assert all(row.tobytes() in final for row in frozen)

    def test_missing_view_data_errors(self):
        sc = sphere_plane_scene(np.random.default_rng(19), 10, 10)
        cams = [front_camera()]
        with pytest.raises(ValidationError):
            repair_removal(sc, cams, np.arange(3), {}, {})


class TestMeshSampling:
    def test_cube_surface_sampling(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                      [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
        f = np.array([[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7],
                      [0, 1, 5], [0, 5, 4], [2, 3, 7], [2, 7, 6],
                      [1, 2, 6], [1, 6, 5], [0, 3, 7], [0, 7, 4]])
        obj = mesh_to_gaussians(v, f, 400, seed=1)
        assert obj.n == 400
        on_face = np.logical_or.reduce([
            np.isclose(obj.positions[:, k], lim, atol=1e-9)
            for k in range(3) for lim in (0.0, 1.0)])
        assert on_face.all()
        assert np.isfinite(obj.log_scales).all()
        norm = normalize_object(obj)
        assert np.linalg.norm(norm.positions, axis=1).max() <= 1.0 + 1e-12
